"""
Run registry: persists successful subcommand invocations.

Recording is best effort. A database failure is logged and never turns a
successful run into a failed one.
"""

import logging
from typing import Any, Dict, List, Optional

from odisco import db
from odisco.models.run import RunRecord

# Configure logging
logger = logging.getLogger(__name__)


def record_run(
    subcommand: str,
    output_path: str,
    task: Optional[str] = None,
    seed: Optional[int] = None,
    parameters: Optional[Dict[str, Any]] = None,
) -> Optional[RunRecord]:
    """
    Store a run record.

    Returns:
        The stored RunRecord, or None if the database write failed
    """
    try:
        db.create_all()
        record = RunRecord(subcommand, output_path, task=task, seed=seed, parameters=parameters)
        db.session.add(record)
        db.session.commit()
        logger.debug(f"Recorded run {record.id} ({subcommand})")
        return record
    except Exception as e:
        logger.warning(f"Could not record {subcommand} run: {e}")
        try:
            db.session.rollback()
        except Exception:
            pass
        return None


def list_runs(limit: int = 20, subcommand: Optional[str] = None) -> List[RunRecord]:
    """Most recent runs first; returns an empty list if the registry is unreadable."""
    try:
        query = RunRecord.query
        if subcommand:
            query = query.filter_by(subcommand=subcommand)
        return query.order_by(RunRecord.created_at.desc(), RunRecord.id.desc()).limit(limit).all()
    except Exception as e:
        logger.warning(f"Could not read the run registry: {e}")
        return []
