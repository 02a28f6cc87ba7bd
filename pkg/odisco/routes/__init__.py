"""
Routes package for organizing Flask blueprints.
"""

from .health import health_bp
from .runs import runs_bp
from .scores import scores_bp

__all__ = ["health_bp", "runs_bp", "scores_bp"]
