"""Recording and reading experiment runs"""

import logging
import math
from datetime import datetime
from typing import Any, Optional

import numpy as np
import pandas as pd
from sqlalchemy import func
from sqlalchemy.orm import Session

from app.models import ExperimentRun, RunRow

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """JSON-safe scalar: numpy types unwrapped, NaN/Inf mapped to None."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def record_run(
    session: Session,
    command: str,
    seed: int,
    params: dict,
    frame: pd.DataFrame,
    output_path: Optional[str] = None,
    started_at: Optional[datetime] = None,
) -> ExperimentRun:
    """Store a finished run and its output rows. The caller owns the transaction."""
    run = ExperimentRun(
        command=command,
        seed=seed,
        params=_plain(params),
        row_count=len(frame),
        status="completed",
        output_path=output_path,
        started_at=started_at or datetime.now(),
        finished_at=datetime.now(),
    )
    for position, record in enumerate(frame.to_dict(orient="records")):
        run.rows.append(RunRow(position=position, data=_plain(record)))
    session.add(run)
    session.flush()
    logger.info(f"Recorded run {run.id} ({command}, {len(frame)} rows)")
    return run


def list_runs(
    session: Session, command: Optional[str] = None, offset: int = 0, limit: int = 50
) -> tuple[list[ExperimentRun], int]:
    query = session.query(ExperimentRun)
    if command:
        query = query.filter(ExperimentRun.command == command)
    total = query.count()
    items = query.order_by(ExperimentRun.id.desc()).offset(offset).limit(limit).all()
    return items, total


def get_run(session: Session, run_id: int) -> Optional[ExperimentRun]:
    return session.get(ExperimentRun, run_id)


def run_rows(
    session: Session, run_id: int, offset: int = 0, limit: Optional[int] = 100
) -> tuple[list[RunRow], int]:
    query = session.query(RunRow).filter(RunRow.run_id == run_id)
    total = query.count()
    query = query.order_by(RunRow.position).offset(offset)
    if limit is not None:
        query = query.limit(limit)
    return query.all(), total


def run_frame(session: Session, run_id: int) -> pd.DataFrame:
    """Rows of a run back as a DataFrame in output order."""
    rows, _ = run_rows(session, run_id, limit=None)
    return pd.DataFrame([r.data for r in rows])


def ledger_stats(session: Session) -> dict:
    by_command = dict(
        session.query(ExperimentRun.command, func.count(ExperimentRun.id))
        .group_by(ExperimentRun.command)
        .all()
    )
    return {
        "total_runs": session.query(func.count(ExperimentRun.id)).scalar() or 0,
        "total_rows": session.query(func.count(RunRow.id)).scalar() or 0,
        "runs_by_command": by_command,
        "latest_run": session.query(func.max(ExperimentRun.started_at)).scalar(),
    }
