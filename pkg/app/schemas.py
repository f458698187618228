"""Pydantic schemas for the results API and instance metadata"""

from datetime import datetime
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

StructureTag = Literal["gaussian", "clustered", "doubly_clustered", "stream", "frames"]


class InstanceMetadata(BaseModel):
    """Ground truth recorded next to a generated matrix or stream file"""

    model: StructureTag
    n1: int = Field(ge=1)
    n2: int = Field(ge=1)
    r_true: int = Field(ge=0)
    rho: float = Field(ge=0.0, le=1.0)
    seed: int
    clusters: Optional[int] = None
    alpha: Optional[float] = None
    period: Optional[int] = None
    noise_sigma: float = 0.0
    extra: dict[str, Any] = {}


# -----------------------------------------------------------------------------
# Run ledger responses
# -----------------------------------------------------------------------------


class RunResponse(BaseModel):
    """One recorded experiment run"""

    id: int
    command: str
    seed: int
    params: dict[str, Any]
    row_count: int
    status: str
    output_path: Optional[str] = None
    started_at: datetime
    finished_at: Optional[datetime] = None

    model_config = ConfigDict(from_attributes=True)


class RunRowResponse(BaseModel):
    """One CSV row emitted by a run"""

    position: int
    data: dict[str, Any]

    model_config = ConfigDict(from_attributes=True)


class PaginatedRuns(BaseModel):
    items: list[RunResponse]
    total: int
    page: int
    page_size: int
    pages: int


class PaginatedRows(BaseModel):
    run_id: int
    items: list[RunRowResponse]
    total: int
    page: int
    page_size: int
    pages: int


class StatsResponse(BaseModel):
    """Ledger summary"""

    total_runs: int
    total_rows: int
    runs_by_command: dict[str, int]
    latest_run: Optional[datetime] = None
