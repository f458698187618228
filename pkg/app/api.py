"""Read-only REST API over the experiment run ledger"""

import logging
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Query
from sqlalchemy import text
from sqlalchemy.orm import Session

from app import __version__
from app.database import get_db
from app.ledger import get_run, ledger_stats, list_runs, run_rows
from app.schemas import (
    PaginatedRows,
    PaginatedRuns,
    RunResponse,
    RunRowResponse,
    StatsResponse,
)

logger = logging.getLogger(__name__)

app = FastAPI(
    title="sketchdecomp results API",
    description="Recorded experiment runs and their output rows",
    version=__version__,
)


def _pages(total: int, page_size: int) -> int:
    return (total + page_size - 1) // page_size


# -----------------------------------------------------------------------------
# Runs endpoints
# -----------------------------------------------------------------------------


@app.get("/runs", response_model=PaginatedRuns)
def list_runs_endpoint(
    command: Optional[str] = None,
    page: int = Query(1, ge=1),
    page_size: int = Query(50, ge=1, le=500),
    db: Session = Depends(get_db),
):
    """List recorded runs, newest first, optionally filtered by command."""
    items, total = list_runs(db, command=command, offset=(page - 1) * page_size, limit=page_size)
    return PaginatedRuns(
        items=[RunResponse.model_validate(r) for r in items],
        total=total,
        page=page,
        page_size=page_size,
        pages=_pages(total, page_size),
    )


@app.get("/runs/{run_id}", response_model=RunResponse)
def get_run_endpoint(run_id: int, db: Session = Depends(get_db)):
    run = get_run(db, run_id)
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    return RunResponse.model_validate(run)


@app.get("/runs/{run_id}/rows", response_model=PaginatedRows)
def get_run_rows(
    run_id: int,
    page: int = Query(1, ge=1),
    page_size: int = Query(100, ge=1, le=1000),
    db: Session = Depends(get_db),
):
    """Output rows of one run in the order they were written."""
    if not get_run(db, run_id):
        raise HTTPException(status_code=404, detail="Run not found")
    items, total = run_rows(db, run_id, offset=(page - 1) * page_size, limit=page_size)
    return PaginatedRows(
        run_id=run_id,
        items=[RunRowResponse.model_validate(r) for r in items],
        total=total,
        page=page,
        page_size=page_size,
        pages=_pages(total, page_size),
    )


# -----------------------------------------------------------------------------
# Statistics
# -----------------------------------------------------------------------------


@app.get("/stats", response_model=StatsResponse)
def get_stats(db: Session = Depends(get_db)):
    return StatsResponse(**ledger_stats(db))


# -----------------------------------------------------------------------------
# Health check
# -----------------------------------------------------------------------------


@app.get("/health")
def health_check(db: Session = Depends(get_db)):
    """Health check endpoint"""
    try:
        db.execute(text("SELECT 1"))
    except Exception as e:
        raise HTTPException(status_code=503, detail=f"Database error: {e}")
    return {"status": "ok", "version": __version__, "database": "connected"}
