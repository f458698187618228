"""Shared fixtures"""

import numpy as np
import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from app.api import app
from app.database import get_db
from app.models import create_tables


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def session_factory():
    engine = create_engine(
        "sqlite://",
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
    create_tables(engine)
    yield sessionmaker(autocommit=False, autoflush=False, bind=engine)
    engine.dispose()


@pytest.fixture
def db_session(session_factory):
    session = session_factory()
    try:
        yield session
    finally:
        session.close()


@pytest.fixture
def client(session_factory):
    def override_get_db():
        db = session_factory()
        try:
            yield db
        finally:
            db.close()

    app.dependency_overrides[get_db] = override_get_db
    with TestClient(app) as test_client:
        yield test_client
    app.dependency_overrides.clear()


def low_rank_plus_sparse(rng, n1, n2, r, rho, amplitude=1.0):
    """Gaussian rank-r matrix plus Bernoulli(rho) sign corruptions."""
    L = rng.standard_normal((n1, r)) @ rng.standard_normal((r, n2))
    mask = rng.random((n1, n2)) < rho
    S = np.where(mask, amplitude * rng.choice([-1.0, 1.0], size=(n1, n2)), 0.0)
    return L, S
