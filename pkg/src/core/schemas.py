"""Pydantic models for run configuration, study grids and fit reports"""

from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

import config as env

from .exceptions import ConfigError
from .model import Kind, Theta


class McemConfig(BaseModel):
    """Settings of one MCEM fit; JSON keys mirror the field names"""
    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    G_schedule: List[int] = Field(default_factory=lambda: [1000, 3000, 10000, 30000, 100000])
    # iterations spent on each entry of G_schedule before moving to the next
    ramp_every: int = Field(default=5, ge=1)
    max_iter: int = Field(default=200, ge=1)
    stop_decimals: int = Field(default=6, ge=0, le=15)
    # measure the stopping change relative to max(1, |θ|) instead of absolutely
    stop_relative: bool = False
    window: int = Field(default=3, ge=1)
    L_ref: int = Field(default=2000, ge=1)
    seed: int = Field(default=20240101, ge=0)
    kind: Kind = Kind.CONTINUOUS
    final_G: Optional[int] = Field(default=None, ge=1)
    level: float = Field(default=0.90, gt=0.0, lt=1.0)
    threads: Optional[int] = Field(default=None, ge=1)
    track_loglik: bool = False
    enumeration_cap: int = Field(default=60, ge=1, le=80)
    # consecutive infeasible M-steps tolerated before the fit is abandoned
    max_infeasible: int = Field(default=10, ge=1)

    @field_validator("kind", mode="before")
    @classmethod
    def _parse_kind(cls, value):
        return Kind.parse(value)

    @field_validator("G_schedule")
    @classmethod
    def _check_schedule(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("G_schedule must not be empty")
        if any(g < 1 for g in value):
            raise ValueError("G_schedule entries must be >= 1")
        if any(later < earlier for earlier, later in zip(value, value[1:])):
            raise ValueError("G_schedule must be non-decreasing")
        return value

    def G_for(self, iteration: int) -> int:
        """Particle count of a 1-based iteration"""
        stage = min((iteration - 1) // self.ramp_every, len(self.G_schedule) - 1)
        return self.G_schedule[stage]

    @property
    def G_final(self) -> int:
        return self.final_G or self.G_schedule[-1]

    @property
    def tolerance(self) -> float:
        return 10.0 ** (-self.stop_decimals)

    @property
    def n_threads(self) -> int:
        return min(self.threads or env.ZICP_THREADS, env.ZICP_THREADS)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "McemConfig":
        try:
            return cls.model_validate(data or {})
        except ValidationError as e:
            raise ConfigError(f"invalid MCEM configuration: {e}") from e


class StudyGrid(BaseModel):
    """Design grid of a bias or coverage study"""
    model_config = ConfigDict(extra="forbid")

    S_values: List[int]
    M_values: List[int]
    replicates: int = Field(ge=1)
    theta_true: Tuple[float, float, float, float]
    level: float = Field(default=0.90, gt=0.0, lt=1.0)
    seed: int = Field(default=20240101, ge=0)
    kind: Kind = Kind.CONTINUOUS
    effort: float = Field(default=1.0, gt=0.0)
    mcem: McemConfig = Field(default_factory=lambda: McemConfig(
        G_schedule=[500, 2000, 5000], ramp_every=3, max_iter=100, stop_decimals=3,
    ))

    @field_validator("kind", mode="before")
    @classmethod
    def _parse_kind(cls, value):
        return Kind.parse(value)

    @field_validator("S_values", "M_values")
    @classmethod
    def _check_sizes(cls, value: List[int]) -> List[int]:
        if not value or any(v < 1 for v in value):
            raise ValueError("grid sizes must be a non-empty list of positive integers")
        return value

    @model_validator(mode="after")
    def _check_theta(self):
        Theta.from_array(self.theta_true)
        return self

    @property
    def theta(self) -> Theta:
        return Theta.from_array(self.theta_true)

    def cells(self) -> List[Tuple[int, int, int]]:
        """(cell index, S, M) in a fixed order; the index keys the random streams"""
        out = []
        for S in self.S_values:
            for M in self.M_values:
                out.append((len(out), S, M))
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StudyGrid":
        try:
            return cls.model_validate(data)
        except (ValidationError, ValueError) as e:
            raise ConfigError(f"invalid study grid: {e}") from e


class IntervalModel(BaseModel):
    lower: float
    upper: float


class StratumReport(BaseModel):
    stratum: str
    mu_pred: float
    mark_pred: float
    e_n_plus: float
    ess: float
    truncation_mass: float


class FitReport(BaseModel):
    """Stable JSON form of a fit"""
    kind: Kind
    theta_hat: Dict[str, float]
    converged: bool
    iterations: int
    trajectory: List[List[float]]
    score: List[float]
    fisher: List[List[float]]
    covariance: Optional[List[List[float]]] = None
    correlation: Optional[List[List[float]]] = None
    level: float
    intervals: Optional[Dict[str, IntervalModel]] = None
    chi2_radius: Optional[float] = None
    strata: List[StratumReport]
    flags: List[str] = Field(default_factory=list)
    loglik_trajectory: Optional[List[float]] = None
    config: McemConfig

    @property
    def theta(self) -> Theta:
        return Theta(**self.theta_hat)
