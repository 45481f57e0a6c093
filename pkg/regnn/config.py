"""
Configuration management for the RE-GNN toolkit.
Supports environment-based configuration with reproducible defaults.
"""

from pathlib import Path

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide configuration with validation."""

    model_config = SettingsConfigDict(
        env_prefix="REGNN_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    # Application
    APP_NAME: str = "RE-GNN Toolkit"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = False

    # Storage
    OUTPUT_ROOT: Path = Path("./runs")

    # Reproducibility
    DEFAULT_SEED: int = Field(default=0, ge=0)

    # Numerics
    CHECKED_MODE: bool = True  # reject NaN/Inf when a Var is created
    TRAIN_DTYPE: str = "float64"  # float64 or float32; verification is always float64
    LEAKY_RELU_SLOPE: float = Field(default=0.01, gt=0.0, lt=1.0)
    DEGREE_EPS: float = Field(default=1e-12, gt=0.0)
    FD_STEP: float = Field(default=1e-6, gt=0.0)

    # Verification
    VERIFY_CONCURRENT: bool = True
    VERIFY_MAX_CONCURRENT: int = Field(default=4, ge=1)
    VERIFY_TRACES: int = Field(default=100, ge=1)
    VERIFY_TRACE_STEPS: int = Field(default=50, ge=1)

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"  # json or text

    @field_validator("TRAIN_DTYPE")
    @classmethod
    def validate_dtype(cls, v: str) -> str:
        """Only the two supported floating point widths are accepted."""
        if v not in ("float64", "float32"):
            raise ValueError(f"TRAIN_DTYPE must be float64 or float32, got {v!r}")
        return v

    @field_validator("LOG_FORMAT")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        if v not in ("json", "text"):
            raise ValueError(f"LOG_FORMAT must be json or text, got {v!r}")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        v = v.upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"Unknown LOG_LEVEL {v!r}")
        return v

    def ensure_directories(self) -> None:
        """Create the output root if it doesn't exist."""
        self.OUTPUT_ROOT.mkdir(parents=True, exist_ok=True)


# Global settings instance
settings = Settings()
