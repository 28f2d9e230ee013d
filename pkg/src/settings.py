"""Settings configuration for the Bohl dichotomy toolkit."""

from functools import lru_cache
from typing import List

from pydantic_settings import BaseSettings
from pydantic import Field, ConfigDict
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """Numerical defaults with environment variable support (prefix BOHL_)."""

    model_config = ConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="BOHL_",
        case_sensitive=False,
        extra="ignore",
    )

    # Output Configuration
    output_dir: str = Field(
        default="out", description="Default directory for CLI artifacts"
    )

    log_level: str = Field(default="INFO", description="Logging level for the CLI")

    # Horizon and Caching
    default_horizon: int = Field(
        default=2048, description="Horizon H used when a scenario does not set one"
    )

    checkpoint_stride: int = Field(
        default=32, description="Stride of cached Phi(n,0) checkpoints"
    )

    condition_floor: float = Field(
        default=1e-12,
        description="Minimal reciprocal condition number of an invertible coefficient",
    )

    # Window Scans
    window_thresholds: List[int] = Field(
        default=[4, 8, 16, 32, 64], description="Default window thresholds N"
    )

    all_pairs_limit: int = Field(
        default=4096,
        description="Largest horizon scanned with all window pairs (dyadic subsample above)",
    )

    dyadic_starts: int = Field(
        default=2048,
        description="Upper bound on scanned window starts under dyadic subsampling",
    )

    # Tolerances
    tol_margin: float = Field(
        default=1e-3, description="Margin for dichotomy verdicts"
    )

    tol_witness: float = Field(
        default=5e-2, description="Band for no-Bohl-dichotomy witnesses"
    )

    # Sampling and Stages
    samples_per_subspace: int = Field(
        default=16, description="Unit vectors sampled per subspace for constant fitting"
    )

    stage_budget: int = Field(
        default=6, description="Number of stages built by finite-stage perturbation plans"
    )

    default_seed: int = Field(default=0, description="Seed used when none is given")

    threads: int = Field(
        default=1, description="Worker threads for per-direction and per-rate loops"
    )

    # Spectrum Grid
    grid_start: float = Field(default=-3.0, description="First rate of the spectrum grid")

    grid_stop: float = Field(default=3.0, description="Last rate of the spectrum grid")

    grid_step: float = Field(default=0.05, description="Spacing of the spectrum grid")

    # Verification Run
    verify_cocycle_systems: int = Field(
        default=50, ge=1, description="Random systems checked by the cocycle step of verify"
    )

    verify_rotation_seeds: int = Field(
        default=100, ge=1, description="Rotation instances per direction checked by verify"
    )


def load_settings() -> Settings:
    """Load settings with proper error handling."""
    try:
        return Settings()
    except Exception as e:
        error_msg = f"Failed to load settings: {e}"
        if "window_thresholds" in str(e).lower():
            error_msg += "\nBOHL_WINDOW_THRESHOLDS must be a JSON list, e.g. [4,8,16]"
        if "output_dir" in str(e).lower():
            error_msg += "\nCheck BOHL_OUTPUT_DIR in your .env file"
        raise ValueError(error_msg) from e


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Process-wide settings instance."""
    return load_settings()
