"""Run record model for the run registry."""

from datetime import datetime, timezone
import json
from typing import Any, Dict, Optional

from sqlalchemy import Column, DateTime, Index, Integer, String, Text

from odisco import db  # type: ignore


class RunRecord(db.Model):  # type: ignore
    """One successful subcommand invocation."""

    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, autoincrement=True)  # type: ignore
    subcommand = Column(String(32), nullable=False)  # type: ignore
    task = Column(String(32), nullable=True)  # type: ignore
    seed = Column(Integer, nullable=True)  # type: ignore
    output_path = Column(Text, nullable=False)  # type: ignore
    parameters = Column(Text, nullable=True)  # type: ignore  # JSON object
    created_at = Column(  # type: ignore
        DateTime, nullable=False, default=lambda: datetime.now(timezone.utc)
    )

    __table_args__ = (
        Index("idx_runs_subcommand", "subcommand"),
        Index("idx_runs_created_at", "created_at"),
    )

    def __init__(
        self,
        subcommand: str,
        output_path: str,
        task: Optional[str] = None,
        seed: Optional[int] = None,
        parameters: Optional[Dict[str, Any]] = None,
    ):
        self.subcommand = subcommand  # type: ignore
        self.output_path = output_path  # type: ignore
        self.task = task  # type: ignore
        self.seed = seed  # type: ignore
        self.parameters = (  # type: ignore
            json.dumps(parameters, sort_keys=True, default=str) if parameters else None
        )

    @property
    def parameters_dict(self) -> Dict[str, Any]:
        if not self.parameters:
            return {}
        try:
            return json.loads(self.parameters)
        except (json.JSONDecodeError, TypeError):
            return {}

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "subcommand": self.subcommand,
            "task": self.task,
            "seed": self.seed,
            "output_path": self.output_path,
            "parameters": self.parameters_dict,
            "created_at": self.created_at.isoformat() if self.created_at else None,
        }

    def __repr__(self) -> str:
        return f"<RunRecord {self.id}: {self.subcommand} -> {self.output_path}>"
