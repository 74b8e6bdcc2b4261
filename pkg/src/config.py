"""Process settings with Pydantic validation."""

from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Lab settings loaded from environment variables and ``.env``."""

    # Logging
    log_level: str = Field(
        default="INFO",
        alias="AECNR_LOG_LEVEL",
        description="Logging level (DEBUG, INFO, WARNING, ERROR)"
    )

    log_dir: Path = Field(
        default=Path("logs"),
        alias="AECNR_LOG_DIR",
        description="Directory for log files"
    )

    # Locations
    config_dir: Path = Field(
        default=Path(__file__).parent.parent / "config",
        alias="AECNR_CONFIG_DIR",
        description="Directory holding the YAML experiment configs"
    )

    results_dir: Path = Field(
        default=Path("results"),
        alias="AECNR_RESULTS_DIR",
        description="Default output directory for sweeps"
    )

    # Execution
    workers: int = Field(
        default=1,
        alias="AECNR_WORKERS",
        ge=1,
        le=64,
        description="Worker processes for sweep points"
    )

    seed: int = Field(
        default=2024,
        alias="AECNR_SEED",
        ge=0,
        description="Default master seed for scenario synthesis"
    )

    # Numerics
    rank_tolerance: float = Field(
        default=1e-10,
        alias="AECNR_RANK_TOLERANCE",
        gt=0.0,
        lt=1.0,
        description="Relative singular-value threshold for pseudo-inverses"
    )

    vad_threshold_db: float = Field(
        default=40.0,
        alias="AECNR_VAD_THRESHOLD_DB",
        gt=0.0,
        le=120.0,
        description="Ideal VAD threshold below the loudest frame (dB)"
    )

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "extra": "ignore",
        "populate_by_name": True,
    }

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        v_upper = v.upper()
        if v_upper not in valid_levels:
            raise ValueError(f"AECNR_LOG_LEVEL must be one of: {valid_levels}")
        return v_upper


# Singleton instance
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get or create settings instance."""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def validate_config() -> bool:
    """
    Validate configuration on startup.

    Returns:
        True if configuration is valid.

    Raises:
        ValueError: If configuration is invalid.
    """
    try:
        settings = get_settings()
        settings.log_dir.mkdir(parents=True, exist_ok=True)
        if not settings.config_dir.is_dir():
            raise ValueError(f"config directory not found: {settings.config_dir}")
        return True
    except Exception as e:
        raise ValueError(f"Configuration validation failed: {e}")


def reset_settings() -> None:
    """Reset settings singleton (useful for testing)."""
    global _settings
    _settings = None
