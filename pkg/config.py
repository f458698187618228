"""Configuration for the sketchdecomp toolkit"""

from pathlib import Path

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings loaded from environment variables"""

    # Run ledger
    database_url: str = "sqlite:///sketchdecomp_runs.db"
    record_runs: bool = False

    # Results API
    api_host: str = "0.0.0.0"
    api_port: int = 8000

    # Execution
    max_workers: int = 1
    default_seed: int = 0

    # Numerical defaults
    rank_tol: float = 1e-8
    pcp_tol: float = 1e-7
    pcp_max_iter: int = 1000
    l1_opt_tol: float = 1e-6

    # Paths
    data_dir: Path = Path("data")
    logs_dir: Path = Path("logs")

    class Config:
        env_file = ".env"
        env_prefix = "SKETCHDECOMP_"


settings = Settings()
