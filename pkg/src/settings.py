"""
Environment-driven runtime settings.

Values come from MMM_* environment variables (optionally loaded from
config/.env by main.py) and are overridden by command-line flags.
"""
from functools import lru_cache

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

VALID_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


class Settings(BaseSettings):
    """Process-wide settings shared by the CLI and the library entry points."""

    model_config = SettingsConfigDict(env_prefix="MMM_", extra="ignore")

    threads: int = Field(1, ge=1, description="Worker threads for column solves and replicates")
    log_level: str = Field("WARNING", description="Root logger level")
    progress: bool = Field(False, description="Show tqdm progress bars for long runs")

    @field_validator("log_level", mode="before")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        """Upper-case and check the level name."""
        level = str(v).strip().upper()
        if level not in VALID_LOG_LEVELS:
            raise ValueError(f"log_level must be one of {sorted(VALID_LOG_LEVELS)}, got {v!r}")
        return level


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Return the cached settings instance."""
    return Settings()
