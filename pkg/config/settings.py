"""
Configuration Settings for the Structured Nonconvex Solver Toolkit
==================================================================

This module contains all configuration settings for the solver library and its
command-line harness. Settings can be overridden using environment variables
(prefix ``NCSOLVE_``) or a ``.env`` file for different environments.

Numeric tolerances that the algorithms depend on live here so that a single
profile controls certificate slack, fallback budgets and experiment presets.
"""

import os
from functools import lru_cache
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Solver settings with environment variable support

    Environment variables will override default values.
    Example: Set NCSOLVE_OUTPUT_DIR to redirect every command's output files.
    """

    model_config = SettingsConfigDict(
        env_prefix="NCSOLVE_",
        case_sensitive=True,
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # =============================================================================
    # APPLICATION SETTINGS
    # =============================================================================

    APP_NAME: str = Field(
        default="ncsolve - structured nonconvex composite solvers",
        description="Application name",
    )

    VERSION: str = Field(default="1.0.0", description="Application version")

    ENVIRONMENT: str = Field(
        default="development",
        description="Environment: development, test, production",
    )

    DEBUG: bool = Field(
        default=False,
        description="Validate oracle gradients by finite differences at construction",
    )

    MAX_WORKERS: int = Field(
        default=4, description="Concurrent experiment cells in table/verify batches"
    )

    # =============================================================================
    # OUTPUT AND LOGGING SETTINGS
    # =============================================================================

    OUTPUT_DIR: Optional[str] = Field(
        default=None,
        description="Overrides the output directory of every command when set",
    )

    LOG_LEVEL: str = Field(
        default="INFO",
        description="Logging level: DEBUG, INFO, WARNING, ERROR, CRITICAL",
    )

    LOG_FILE_PATH: Optional[str] = Field(
        default=None, description="Optional path to a log file"
    )

    RUN_LOG_ENABLED: bool = Field(
        default=True, description="Append one JSON line per solver run to runs.jsonl"
    )

    # =============================================================================
    # NUMERICAL TOLERANCES
    # =============================================================================

    LAMBDA_MIN: float = Field(
        default=1e-8, description="Floor applied to sampled smoothness constants"
    )

    LAMBDA_SAFETY_FACTOR: float = Field(
        default=2.0, description="Multiplier applied to estimated lambda for planners"
    )

    SUBPROBLEM_TOL: float = Field(
        default=1e-10, description="Additive slack in every certificate comparison"
    )

    DESCENT_TOL: float = Field(
        default=1e-8, description="Slack for monotone descent checks"
    )

    BISECTION_DERIV_TOL: float = Field(
        default=1e-12, description="Line-search bisection derivative tolerance"
    )

    BISECTION_INTERVAL_TOL: float = Field(
        default=1e-14, description="Line-search bisection interval tolerance"
    )

    FALLBACK_ITERATIONS: int = Field(
        default=10000, description="Projected-subgradient fallback iterations"
    )

    DEGENERATE_PAIR_TOL: float = Field(
        default=1e-12, description="Sampled pairs closer than this are resampled"
    )

    GRADIENT_CHECK_RTOL: float = Field(
        default=1e-5, description="Relative tolerance of finite-difference checks"
    )

    PHI_STAR_SAMPLES: int = Field(
        default=10000, description="Samples used for the default lower bound on Phi*"
    )

    PHI_STAR_MARGIN: float = Field(
        default=0.1, description="Relative margin subtracted from the sampled minimum"
    )

    SUPPORT_THRESHOLD: float = Field(
        default=1e-10, description="Entries above this magnitude count as support"
    )

    # =============================================================================
    # STATISTICAL CHECKS
    # =============================================================================

    MC_REPLICATIONS: int = Field(
        default=100, description="Replications for expectation-bound checks"
    )

    MC_STDERR_SLACK: float = Field(
        default=3.0, description="Standard errors of slack in replication checks"
    )

    # =============================================================================
    # EXPERIMENT PRESETS
    # =============================================================================

    TABLE1_LAMBDA: float = Field(default=20.0, description="Tensor PCA lambda preset")

    TABLE1_RHO: float = Field(default=0.85, description="Tensor PCA L1 weight preset")

    TABLE1_MAX_ITERS: int = Field(
        default=2000, description="Iteration cap of tensor PCA table runs"
    )

    TABLE1_EPS: float = Field(
        default=1e-2, description="Certificate target of tensor PCA table runs"
    )

    TABLE2_EPS: float = Field(
        default=1e-4, description="Certificate target of ZVD table runs"
    )

    TABLE2_MAX_ITERS: int = Field(
        default=600, description="Iteration cap of ZVD table runs"
    )

    ZVD_GAMMA: float = Field(default=1.0, description="Default ZVD penalty weight")

    DESK_TENSOR_MAX_N: int = Field(
        default=12, description="Largest tensor mode size accepted without --force"
    )

    # =============================================================================
    # VALIDATORS
    # =============================================================================

    @field_validator("ENVIRONMENT")
    @classmethod
    def validate_environment(cls, v):
        """Validate environment setting"""
        allowed_environments = ["development", "test", "production"]
        if v not in allowed_environments:
            raise ValueError(f"Environment must be one of: {allowed_environments}")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v):
        """Validate log level"""
        allowed_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in allowed_levels:
            raise ValueError(f"Log level must be one of: {allowed_levels}")
        return v.upper()

    @field_validator(
        "LAMBDA_MIN",
        "SUBPROBLEM_TOL",
        "DESCENT_TOL",
        "BISECTION_DERIV_TOL",
        "BISECTION_INTERVAL_TOL",
        "DEGENERATE_PAIR_TOL",
        "GRADIENT_CHECK_RTOL",
        "SUPPORT_THRESHOLD",
    )
    @classmethod
    def validate_positive_tolerance(cls, v):
        """Tolerances must be strictly positive"""
        if v <= 0:
            raise ValueError("Tolerances must be positive")
        return v

    @field_validator("LAMBDA_SAFETY_FACTOR")
    @classmethod
    def validate_safety_factor(cls, v):
        """A safety factor below one would shrink a certified constant"""
        if v < 1:
            raise ValueError("LAMBDA_SAFETY_FACTOR must be >= 1")
        return v

    @field_validator("FALLBACK_ITERATIONS", "PHI_STAR_SAMPLES", "MAX_WORKERS")
    @classmethod
    def validate_positive_count(cls, v):
        """Counts must be at least one"""
        if v < 1:
            raise ValueError("Counts must be >= 1")
        return v


# =============================================================================
# ENVIRONMENT-SPECIFIC CONFIGURATIONS
# =============================================================================


def get_development_settings() -> Settings:
    """Get settings for development environment"""
    return Settings(ENVIRONMENT="development", DEBUG=True, LOG_LEVEL="DEBUG")


def get_test_settings() -> Settings:
    """Get settings for the test environment (quiet, no gradient checks)"""
    return Settings(
        ENVIRONMENT="test",
        DEBUG=False,
        LOG_LEVEL="WARNING",
        RUN_LOG_ENABLED=False,
        FALLBACK_ITERATIONS=20000,
    )


def get_production_settings() -> Settings:
    """Get settings for production environment"""
    return Settings(ENVIRONMENT="production", DEBUG=False, LOG_LEVEL="WARNING")


@lru_cache(maxsize=None)
def get_settings() -> Settings:
    """
    Get settings based on environment

    The profile is selected by NCSOLVE_ENVIRONMENT (default development) and
    cached for the lifetime of the process.
    """
    env = os.getenv("NCSOLVE_ENVIRONMENT", "development").lower()

    if env == "production":
        return get_production_settings()
    elif env == "test":
        return get_test_settings()
    else:
        return get_development_settings()


# Example usage and testing
if __name__ == "__main__":
    settings = get_settings()
    print(f"Environment: {settings.ENVIRONMENT}")
    print(f"Debug Mode: {settings.DEBUG}")
    print(f"Certificate slack: {settings.SUBPROBLEM_TOL}")
    print(f"Output override: {settings.OUTPUT_DIR}")
