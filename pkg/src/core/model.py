"""Data and parameter types, forward simulators and closed-form moments of the
compound Poisson (law of leaks) models.

Continuous data (LOL): Y = X_1 + ... + X_N, N ~ Poisson(μD), X ~ Exp(ρ).
Count data (DLOL): same construction with marks on {1, 2, ...},
P(X = k) = p (1 - p)^(k - 1). The random-effects versions draw μ_s ~ Γ(a, b)
and ρ_s ~ Γ(c, d) (or p_s ~ Beta(c, d)) once per stratum.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .exceptions import DataFormatError, DomainError
from .specfun import Beta, Gamma, RngStream, draw

logger = logging.getLogger(__name__)


class Kind(str, Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"

    @classmethod
    def parse(cls, value) -> "Kind":
        """Accept enum members and the CLI spellings cont/disc"""
        if isinstance(value, Kind):
            return value
        aliases = {"cont": cls.CONTINUOUS, "disc": cls.DISCRETE}
        key = str(value).lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise DomainError(f"unknown data kind {value!r}")


@dataclass(frozen=True)
class Theta:
    """Hyperparameters (a, b, c, d) of the random-effects layer"""
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        values = (self.a, self.b, self.c, self.d)
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise DomainError(f"Theta components must be strictly positive, got {values}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Theta":
        a, b, c, d = (float(v) for v in values)
        return cls(a, b, c, d)

    @classmethod
    def parse(cls, text: str) -> "Theta":
        """Parse the CLI form `a,b,c,d`"""
        parts = [p for p in text.split(",") if p.strip()]
        if len(parts) != 4:
            raise DomainError(f"theta needs four comma-separated values, got {text!r}")
        try:
            return cls.from_array([float(p) for p in parts])
        except ValueError:
            raise DomainError(f"theta values must be decimal numbers, got {text!r}")

    def to_dict(self) -> Dict[str, float]:
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d}


@dataclass(frozen=True)
class Observation:
    y: float
    effort: float = 1.0


@dataclass(frozen=True, eq=False)
class Stratum:
    """One homogeneous block; y and effort are read-only arrays of equal length"""
    id: str
    y: np.ndarray
    effort: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        effort = np.array(self.effort, dtype=float).reshape(-1)
        if y.size == 0:
            raise DomainError(f"stratum {self.id!r} has no observations")
        if effort.shape != y.shape:
            raise DomainError(f"stratum {self.id!r}: y and effort lengths differ")
        if np.any(~np.isfinite(y)) or np.any(y < 0):
            raise DomainError(f"stratum {self.id!r}: y must be finite and >= 0")
        if np.any(~np.isfinite(effort)) or np.any(effort <= 0):
            raise DomainError(f"stratum {self.id!r}: effort must be > 0")
        y.setflags(write=False)
        effort.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "effort", effort)

    @classmethod
    def from_observations(cls, stratum_id: str, observations: Iterable[Observation]) -> "Stratum":
        obs = list(observations)
        return cls(stratum_id, [o.y for o in obs], [o.effort for o in obs])

    def __len__(self) -> int:
        return self.y.size


@dataclass(frozen=True, eq=False)
class Dataset:
    kind: Kind
    strata: Tuple[Stratum, ...]

    def __post_init__(self):
        kind = Kind.parse(self.kind)
        strata = tuple(self.strata)
        if not strata:
            raise DomainError("a dataset needs at least one stratum")
        if kind is Kind.DISCRETE:
            for stratum in strata:
                if np.any(stratum.y != np.round(stratum.y)):
                    raise DomainError(f"stratum {stratum.id!r}: discrete data must be integers")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "strata", strata)

    @property
    def n_strata(self) -> int:
        return len(self.strata)

    @property
    def n_observations(self) -> int:
        return sum(len(s) for s in self.strata)

    def all_zero(self) -> bool:
        return all(np.all(s.y == 0) for s in self.strata)

    def design(self) -> List[np.ndarray]:
        """Per-stratum effort vectors, reusable by `simulate_hierarchy`"""
        return [np.array(s.effort) for s in self.strata]

    def to_frame(self) -> pd.DataFrame:
        """Rows `stratum,effort,y`, one per tow"""
        frames = [
            pd.DataFrame({"stratum": s.id, "effort": s.effort, "y": s.y})
            for s in self.strata
        ]
        frame = pd.concat(frames, ignore_index=True)
        if self.kind is Kind.DISCRETE:
            frame["y"] = frame["y"].astype(np.int64)
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, kind) -> "Dataset":
        """Build from a frame with columns stratum, y and optionally effort"""
        kind = Kind.parse(kind)
        missing = {"stratum", "y"} - set(frame.columns)
        if missing:
            raise DataFormatError(f"missing column(s): {', '.join(sorted(missing))}")
        frame = frame.copy()
        if "effort" not in frame.columns:
            frame["effort"] = 1.0
        frame["effort"] = frame["effort"].fillna(1.0)
        grouped: Dict[str, List[Observation]] = {}
        for row, (stratum_id, y, effort) in enumerate(zip(frame["stratum"], frame["y"], frame["effort"]), start=1):
            try:
                y_val, e_val = float(y), float(effort)
            except (TypeError, ValueError):
                raise DataFormatError(f"row {row}: y and effort must be numbers, got y={y!r}, effort={effort!r}")
            if not np.isfinite(y_val) or y_val < 0:
                raise DataFormatError(f"row {row}: y must be a finite number >= 0, got {y!r}")
            if not np.isfinite(e_val) or e_val <= 0:
                raise DataFormatError(f"row {row}: effort must be > 0, got {effort!r}")
            if kind is Kind.DISCRETE and y_val != round(y_val):
                raise DataFormatError(f"row {row}: discrete data needs integer y, got {y!r}")
            grouped.setdefault(str(stratum_id), []).append(Observation(y_val, e_val))
        strata = [Stratum.from_observations(sid, obs) for sid, obs in grouped.items()]
        if not strata:
            raise DataFormatError("no rows in dataset")
        return cls(kind, tuple(strata))


@dataclass(frozen=True, eq=False)
class LatentTruth:
    """Simulated random effects and clump counts, kept for test oracles"""
    mu: np.ndarray
    mark: np.ndarray  # ρ_s (continuous) or p_s (discrete)
    n_clumps: Tuple[np.ndarray, ...]

    def to_frame(self, dataset: Dataset) -> pd.DataFrame:
        rows = []
        for s, stratum in enumerate(dataset.strata):
            for n in self.n_clumps[s]:
                rows.append({"stratum": stratum.id, "mu": self.mu[s], "mark": self.mark[s], "N": int(n)})
        return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Closed-form moments
# ---------------------------------------------------------------------------

def _require_positive(**values: float):
    for name, value in values.items():
        if not (np.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be > 0, got {value}")


def lol_moments(mu: float, effort: float, rho: float) -> Tuple[float, float, float]:
    """(mean, variance, P(Y = 0)) of LOL(μD, ρ)"""
    _require_positive(mu=mu, effort=effort, rho=rho)
    m = mu * effort
    return m / rho, 2.0 * m / rho ** 2, float(np.exp(-m))


def dlol_moments(mu: float, effort: float, p: float) -> Tuple[float, float, float]:
    """(mean, variance, P(Y = 0)) of DLOL(μD, p) with E X = 1/p, E X² = (2 - p)/p²"""
    _require_positive(mu=mu, effort=effort)
    if not 0.0 < p <= 1.0:
        raise DomainError(f"p must lie in (0, 1], got {p}")
    m = mu * effort
    return m / p, m * (2.0 - p) / p ** 2, float(np.exp(-m))


def lol_char_fn(omega: float, mu: float, rho: float) -> complex:
    """Characteristic function exp(-μ iω / (ρ + iω))"""
    _require_positive(mu=mu, rho=rho)
    iw = 1j * omega
    return complex(np.exp(-mu * iw / (rho + iw)))


def dlol_char_fn(omega: float, mu: float, p: float) -> complex:
    """Characteristic function exp(-μ (1 - f(ω))) with positive-geometric marks"""
    _require_positive(mu=mu)
    if not 0.0 < p <= 1.0:
        raise DomainError(f"p must lie in (0, 1], got {p}")
    z = np.exp(1j * omega)
    mark_cf = p * z / (1.0 - (1.0 - p) * z)
    return complex(np.exp(-mu * (1.0 - mark_cf)))


# ---------------------------------------------------------------------------
# Simulators
# ---------------------------------------------------------------------------

def _clump_counts(mu_effort, rng: RngStream, size: Optional[int]) -> np.ndarray:
    mu_effort = np.asarray(mu_effort, dtype=float)
    if np.any(mu_effort < 0):
        raise DomainError("mu_effort must be >= 0")
    return rng.generator.poisson(mu_effort, size=size)


def sample_lol(mu_effort, rho, rng: RngStream, size: Optional[int] = None, return_counts: bool = False):
    """Sum of N ~ Poisson(mu_effort) exponential marks with rate rho; 0 when N = 0"""
    if np.any(np.asarray(rho) <= 0):
        raise DomainError(f"rho must be > 0, got {rho}")
    n = _clump_counts(mu_effort, rng, size)
    # Γ(N, ρ) is the sum of N exponentials; shape 0 gives exactly 0
    y = rng.generator.gamma(np.maximum(n, 1), 1.0 / np.asarray(rho, dtype=float))
    y = np.where(n > 0, y, 0.0)
    if np.ndim(y) == 0:
        y, n = float(y), int(n)
    return (y, n) if return_counts else y


def sample_dlol(mu_effort, p, rng: RngStream, size: Optional[int] = None, return_counts: bool = False):
    """Sum of N ~ Poisson(mu_effort) marks on {1, 2, ...} with P(X = 1) = p"""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0) or np.any(p_arr > 1):
        raise DomainError(f"p must lie in (0, 1], got {p}")
    n = _clump_counts(mu_effort, rng, size)
    # N positive geometrics = N + NegBin(N, p) failures
    extra = rng.generator.negative_binomial(np.maximum(n, 1), p_arr)
    y = np.where(n > 0, n + extra, 0)
    if np.ndim(y) == 0:
        y, n = int(y), int(n)
    return (y, n) if return_counts else y


def uniform_design(n_strata: int, per_stratum: int, effort: float = 1.0) -> List[np.ndarray]:
    """S strata of M tows with identical effort"""
    if n_strata < 1 or per_stratum < 1:
        raise DomainError("design needs at least one stratum and one tow per stratum")
    _require_positive(effort=effort)
    return [np.full(per_stratum, float(effort)) for _ in range(n_strata)]


def simulate_hierarchy(theta: Theta, design: Sequence[Sequence[float]], kind, rng: RngStream,
                       stratum_ids: Optional[Sequence[str]] = None) -> Tuple[Dataset, LatentTruth]:
    """Draw (μ_s, ρ_s or p_s) per stratum, then every tow given its effort"""
    kind = Kind.parse(kind)
    if len(design) == 0:
        raise DomainError("design must contain at least one stratum")
    n_strata = len(design)
    mu = np.atleast_1d(draw(Gamma(theta.a, theta.b), rng, size=n_strata))
    if kind is Kind.CONTINUOUS:
        mark = np.atleast_1d(draw(Gamma(theta.c, theta.d), rng, size=n_strata))
    else:
        mark = np.atleast_1d(draw(Beta(theta.c, theta.d), rng, size=n_strata))
        # p = 0 is unreachable in exact arithmetic but beta draws can underflow
        mark = np.clip(mark, np.finfo(float).tiny, 1.0)

    ids = list(stratum_ids) if stratum_ids is not None else [f"S{s + 1:03d}" for s in range(n_strata)]
    strata, counts = [], []
    for s, efforts in enumerate(design):
        efforts = np.asarray(efforts, dtype=float)
        if efforts.size == 0:
            raise DomainError(f"stratum {s} of the design is empty")
        if kind is Kind.CONTINUOUS:
            y, n = sample_lol(mu[s] * efforts, mark[s], rng, return_counts=True)
        else:
            y, n = sample_dlol(mu[s] * efforts, mark[s], rng, return_counts=True)
        strata.append(Stratum(ids[s], np.atleast_1d(y), efforts))
        counts.append(np.atleast_1d(np.asarray(n, dtype=np.int64)))

    dataset = Dataset(kind, tuple(strata))
    logger.debug(f"simulated {n_strata} strata, zero fraction {zero_fraction(dataset):.3f}")
    return dataset, LatentTruth(mu=mu, mark=mark, n_clumps=tuple(counts))


def zero_fraction(dataset: Dataset) -> float:
    zeros = sum(int(np.sum(s.y == 0)) for s in dataset.strata)
    return zeros / dataset.n_observations
