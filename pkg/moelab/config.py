"""
MoE Lab - Environment Configuration
===================================

Centralized process settings with validation and defaults.
Experiment hyperparameters live in flat config files (see experiment.py);
this module covers everything that varies per machine or per invocation.
"""

from functools import lru_cache
from typing import Any, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .core.validation import Precision


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables.

    Every field can be overridden with a MOELAB_-prefixed variable,
    e.g. MOELAB_SEED=3 or MOELAB_LOG_FORMAT=json.
    """

    # ==========================================================================
    # Application Settings
    # ==========================================================================
    app_name: str = Field(default="moelab", description="Application name")
    app_env: str = Field(default="development", description="Environment: development, testing, production")
    log_level: str = Field(default="INFO", description="Logging level")
    log_format: str = Field(default="text", description="Console log format: text or json")
    log_file: Optional[str] = Field(default=None, description="Optional JSON log file")

    # ==========================================================================
    # Numerics Settings
    # ==========================================================================
    seed: int = Field(default=1, ge=0, description="Default seed when a config does not pin one")
    precision: Precision = Field(default=Precision.FLOAT64, description="Tensor precision: float64 or float32")
    debug_checks: bool = Field(default=False, description="Raise on NaN/Inf in every op output")

    # ==========================================================================
    # Execution Settings
    # ==========================================================================
    workers: int = Field(default=1, ge=1, description="Worker threads for evaluation and generation")
    metrics_enabled: bool = Field(default=True, description="Write Prometheus textfile metrics after training")

    # ==========================================================================
    # Validators
    # ==========================================================================

    @field_validator("app_env")
    @classmethod
    def validate_environment(cls, v: str) -> str:
        allowed = ["development", "testing", "production"]
        if v.lower() not in allowed:
            raise ValueError(f"app_env must be one of: {', '.join(allowed)}")
        return v.lower()

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        allowed = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in allowed:
            raise ValueError(f"log_level must be one of: {', '.join(allowed)}")
        return v.upper()

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        if v.lower() not in ("text", "json"):
            raise ValueError("log_format must be text or json")
        return v.lower()

    @field_validator("precision", mode="before")
    @classmethod
    def normalize_precision(cls, v: Any) -> Any:
        return v.lower() if isinstance(v, str) else v

    @property
    def is_testing(self) -> bool:
        return self.app_env == "testing"

    model_config = SettingsConfigDict(
        env_prefix="MOELAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


@lru_cache()
def get_settings() -> Settings:
    """
    Get cached settings instance.

    Tests clear the cache with get_settings.cache_clear() after changing the environment.
    """
    return Settings()
