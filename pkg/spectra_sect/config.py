import json
import os
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

JOBS_ENV_VAR = "SPECTRA_SECT_JOBS"


class Tolerances(BaseModel):
    """
    Numerical thresholds shared by every operation.

    Attributes:
        hermiticity (float): Max entry of A - A* accepted as Hermitian.
        idempotency (float): Max entry of P^2 - P accepted as a projection.
        gap (float): Distance to an interval endpoint that counts as a collision.
        invertibility (float): Relative threshold, min |eigenvalue| > tol * (1 + |A|).
        inclusion (float): Operator-norm tolerance for range inclusions.
        unitarity (float): Max entry of U*U - 1 accepted as unitary.
        margin (float): Spectral radius margin below 1 for the inverse transform.
        exact_hit (float): Relative distance at which an eigenvalue is treated
                           as lying exactly on an endpoint.
    """

    model_config = ConfigDict(frozen=True)

    hermiticity: float = 1e-10
    idempotency: float = 1e-8
    gap: float = 1e-9
    invertibility: float = 1e-9
    inclusion: float = 1e-8
    unitarity: float = 1e-10
    margin: float = 1e-12
    exact_hit: float = 1e-12

    @field_validator("*")
    def tolerance_must_be_positive(cls, v):
        """
        Validates that a tolerance is strictly positive.

        Args:
            v (float): The tolerance to be validated.

        Raises:
            ValueError: If the tolerance is zero or negative.

        Returns:
            float: The validated tolerance.
        """
        if not v > 0:
            raise ValueError("tolerances must be positive")
        return v


DEFAULT_TOLERANCES = Tolerances()


def default_jobs() -> int:
    """
    Reads the default worker count from the environment.

    Returns:
        int: Value of SPECTRA_SECT_JOBS, or 1 when unset.
    """
    raw = os.environ.get(JOBS_ENV_VAR)
    if raw is None or not raw.strip():
        return 1
    return int(raw)


class RunConfig(BaseModel):
    """
    Complete configuration of one CLI run.

    A fixed RunConfig together with fixed inputs produces byte-identical output.
    """

    model_config = ConfigDict(frozen=True)

    tolerances: Tolerances = Field(default_factory=Tolerances)
    rank_budget: int | None = None
    eps: float = 1e-6
    jump: float = 0.5
    continuity: float = 0.05
    seed: int = 0
    output_format: Literal["json", "csv"] = "json"
    jobs: int = 1

    @field_validator("rank_budget")
    def rank_budget_must_be_nonnegative(cls, v):
        """
        Validates that the rank budget is a nonnegative integer.

        Args:
            v (int | None): The rank budget to be validated.

        Raises:
            ValueError: If the rank budget is negative.

        Returns:
            int | None: The validated rank budget.
        """
        if v is not None and v < 0:
            raise ValueError("rank_budget must be nonnegative")
        return v

    @field_validator("eps", "jump", "continuity")
    def threshold_must_be_positive(cls, v):
        if not v > 0:
            raise ValueError("thresholds must be positive")
        return v

    @field_validator("seed")
    def seed_must_fit_64_bits(cls, v):
        if not 0 <= v < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return v

    @field_validator("jobs")
    def jobs_must_be_positive(cls, v):
        if v < 1:
            raise ValueError("jobs must be at least 1")
        return v

    @classmethod
    def from_sources(
        cls, config_file: Path | None = None, overrides: dict[str, Any] | None = None
    ) -> "RunConfig":
        """
        Builds a RunConfig from an optional JSON file and flag overrides.

        Flags win over the file. Override keys that name a tolerance are routed
        into the nested tolerances section; None values are ignored.

        Args:
            config_file (Path | None): Path given with --config.
            overrides (dict | None): Values taken from command line flags.

        Returns:
            RunConfig: The merged configuration.
        """
        data: dict[str, Any] = {}
        if config_file is not None:
            data = dict(Config(config_file).config)

        tolerances = dict(data.pop("tolerances", None) or {})
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key in Tolerances.model_fields:
                tolerances[key] = value
            else:
                data[key] = value

        return cls.model_validate({**data, "tolerances": tolerances})


class Config:
    """
    A JSON configuration file on disk.
    """

    def __init__(self, config_file: Path):
        self.config_file = Path(config_file)
        self.config = self.load_config()

    def load_config(self) -> dict:
        """
        Loads the configuration from the config file.

        Returns:
            dict: The loaded configuration settings, empty when the file is missing.

        Raises:
            json.JSONDecodeError: If the file is not valid JSON.
            ValueError: If the file does not hold a JSON object.
        """
        config: dict = {}
        if self.config_file.exists():
            with open(self.config_file, "r", encoding="utf-8") as file:
                config = json.load(file)
            if not isinstance(config, dict):
                raise ValueError(
                    f"Config file {self.config_file} must contain a JSON object."
                )
        return config
