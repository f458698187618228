"""SQLAlchemy models for the experiment run ledger"""

from datetime import datetime
from typing import Optional

from sqlalchemy import DateTime, ForeignKey, Index, Integer, String, func
from sqlalchemy.dialects.sqlite import JSON
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship


class Base(DeclarativeBase):
    """Base class for all models"""

    pass


class ExperimentRun(Base):
    """
    One invocation of an experiment command.

    params holds the resolved command-line arguments including the master
    seed, so a run can be replayed bit-for-bit.
    """

    __tablename__ = "experiment_runs"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    command: Mapped[str] = mapped_column(String(50), nullable=False, index=True)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    params: Mapped[dict] = mapped_column(JSON, nullable=False)
    row_count: Mapped[int] = mapped_column(Integer, default=0)
    status: Mapped[str] = mapped_column(String(20), default="completed")
    output_path: Mapped[Optional[str]] = mapped_column(String(500))
    started_at: Mapped[datetime] = mapped_column(DateTime, server_default=func.now())
    finished_at: Mapped[Optional[datetime]] = mapped_column(DateTime)

    rows: Mapped[list["RunRow"]] = relationship(
        back_populates="run", cascade="all, delete-orphan", order_by="RunRow.position"
    )

    def __repr__(self) -> str:
        return f"<ExperimentRun({self.id}, {self.command}, seed={self.seed})>"


class RunRow(Base):
    """One CSV row emitted by a run, in canonical output order"""

    __tablename__ = "run_rows"

    id: Mapped[int] = mapped_column(Integer, primary_key=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("experiment_runs.id"), nullable=False)
    position: Mapped[int] = mapped_column(Integer, nullable=False)
    data: Mapped[dict] = mapped_column(JSON, nullable=False)

    run: Mapped[ExperimentRun] = relationship(back_populates="rows")

    __table_args__ = (Index("ix_run_rows_run_position", "run_id", "position", unique=True),)

    def __repr__(self) -> str:
        return f"<RunRow(run={self.run_id}, position={self.position})>"


def create_tables(engine):
    """Create all tables"""
    Base.metadata.create_all(engine)
