# Data models
from .run import RunRecord
from .task import TaskKind

__all__ = ["RunRecord", "TaskKind"]
