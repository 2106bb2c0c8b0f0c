"""
Configuration management for the EDA flow engine

This file handles all engine settings and provides a clean way to access
configuration values throughout the package.
"""

from pathlib import Path
from typing import List, Tuple

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

PACKAGE_DIR = Path(__file__).resolve().parent
DATA_DIR = PACKAGE_DIR / "data"


class Settings(BaseSettings):
    """
    Engine settings loaded from environment variables.

    Pydantic automatically loads values from environment variables
    (prefixed with ``EDAFLOW_``) and validates them according to the type hints.
    """

    # Application Info
    app_name: str = "edaflow"
    app_version: str = "1.0.0"
    debug: bool = False

    # Logging
    log_level: str = "INFO"
    log_format: str = "json"

    # Storage
    runs_dir: Path = Path("runs")

    # Shipped reference data (versioned JSON files)
    price_list_path: Path = DATA_DIR / "price_list.json"
    mock_model_path: Path = DATA_DIR / "mock_model.json"
    fault_list_path: Path = DATA_DIR / "fault_list.json"
    templates_dir: Path = PACKAGE_DIR / "templates"

    # Execution defaults
    default_vcpus: int = 4
    default_seed: int = 0
    cluster_topology: str = "4x8"

    # Allocation guardrails
    max_budget_s: float = 1_000_000.0
    oracle_limit: int = 1_000_000

    # Design space exploration
    dse_budget: int = 64
    dse_strategy: str = "random"
    fault_recurrence_limit: int = 3
    utilization_range: Tuple[float, float] = (0.3, 0.9)
    density_range: Tuple[float, float] = (0.3, 0.95)

    # Supported vCPU configurations for synthetic datasets
    vcpu_options: List[int] = [1, 2, 4, 8]

    @field_validator("log_format")
    @classmethod
    def check_log_format(cls, v: str) -> str:
        if v not in ("json", "console"):
            raise ValueError("log_format must be 'json' or 'console'")
        return v

    model_config = SettingsConfigDict(
        env_prefix="EDAFLOW_",
        # Tell Pydantic to load from .env file
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


# Create a global settings instance
# This will be imported and used throughout the package
settings = Settings()
