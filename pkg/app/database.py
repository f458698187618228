"""
Engine and sessions for the run ledger.

The ledger is usually a SQLite file shared by `sketchdecomp --record` runs
and the results API, so file databases are opened in WAL mode with a busy
timeout and their directory is created on first use.
"""

import logging
from contextlib import contextmanager
from pathlib import Path

from sqlalchemy import Engine, create_engine, event
from sqlalchemy.engine import make_url
from sqlalchemy.orm import sessionmaker

from app.models import create_tables
from config import settings

logger = logging.getLogger(__name__)

BUSY_TIMEOUT_MS = 5000


def make_engine(url: str) -> Engine:
    parsed = make_url(url)
    if parsed.get_backend_name() != "sqlite":
        return create_engine(url, echo=False)

    in_memory = parsed.database in (None, "", ":memory:")
    if not in_memory:
        Path(parsed.database).parent.mkdir(parents=True, exist_ok=True)
    engine = create_engine(url, echo=False, connect_args={"check_same_thread": False})

    @event.listens_for(engine, "connect")
    def _sqlite_pragmas(dbapi_connection, _record):
        cursor = dbapi_connection.cursor()
        if not in_memory:
            cursor.execute("PRAGMA journal_mode=WAL")
        cursor.execute(f"PRAGMA busy_timeout={BUSY_TIMEOUT_MS}")
        cursor.execute("PRAGMA foreign_keys=ON")
        cursor.close()

    return engine


engine = make_engine(settings.database_url)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def init_ledger() -> None:
    """Create the ledger tables if they are missing."""
    create_tables(engine)
    logger.debug(f"Run ledger ready at {engine.url}")


def get_db():
    """FastAPI dependency; the API only reads, so nothing is committed"""
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


@contextmanager
def get_session():
    """Session that commits a recorded run, or rolls the whole run back"""
    session = SessionLocal()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()


@contextmanager
def open_ledger():
    """get_session on a ledger whose tables are known to exist"""
    init_ledger()
    with get_session() as session:
        yield session
