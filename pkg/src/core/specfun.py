"""Special functions and seeded sampling primitives shared by every module"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from scipy import special, stats

from .exceptions import DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def _check_positive(x: ArrayLike, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} requires x > 0, got {x!r}")
    return arr


def _scalar_or_array(value: np.ndarray, like: ArrayLike) -> ArrayLike:
    return float(value) if np.ndim(like) == 0 else value


def log_gamma(x: ArrayLike) -> ArrayLike:
    """ln Γ(x) for x > 0"""
    arr = _check_positive(x, "log_gamma")
    return _scalar_or_array(special.gammaln(arr), x)


def log_beta(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    """ln B(a, b) for a, b > 0"""
    _check_positive(a, "log_beta")
    _check_positive(b, "log_beta")
    value = special.betaln(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def digamma(x: ArrayLike) -> ArrayLike:
    """ψ(x) = d ln Γ(x) / dx for x > 0.

    scipy evaluates it by upward recurrence followed by the asymptotic series
    ln x − 1/(2x) − Σ B_2n / (2n x^2n).
    """
    arr = _check_positive(x, "digamma")
    return _scalar_or_array(special.psi(arr), x)


def trigamma(x: ArrayLike) -> ArrayLike:
    """ψ'(x) for x > 0"""
    arr = _check_positive(x, "trigamma")
    return _scalar_or_array(special.polygamma(1, arr), x)


def normal_quantile(p: float) -> float:
    """Standard normal quantile z_p"""
    if not 0.0 < p < 1.0:
        raise DomainError(f"normal_quantile requires 0 < p < 1, got {p}")
    return float(stats.norm.ppf(p))


def chi2_quantile(p: float, dof: int) -> float:
    """Quantile of the chi-square distribution with `dof` degrees of freedom"""
    if not 0.0 <= p < 1.0:
        raise DomainError(f"chi2_quantile requires 0 <= p < 1, got {p}")
    if dof < 1:
        raise DomainError(f"chi2_quantile requires dof >= 1, got {dof}")
    return float(stats.chi2.ppf(p, dof))


def log_normalize(log_w: np.ndarray) -> np.ndarray:
    """Normalised probabilities from unnormalised log-weights"""
    log_w = np.asarray(log_w, dtype=float)
    return np.exp(log_w - special.logsumexp(log_w))


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

class RngStream:
    """Splittable, explicitly passed random stream.

    The same ``(seed, stream_id, path)`` always reproduces the same draws;
    different stream ids or paths give independent PCG64 streams through
    ``numpy.random.SeedSequence`` spawn keys.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: Tuple[int, ...] = ()):
        if seed < 0 or stream_id < 0:
            raise DomainError("RngStream seed and stream_id must be non-negative")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(int(k) for k in path)
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.path)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def spawn(self, *key: int) -> "RngStream":
        """Child stream keyed by integers, e.g. (iteration, stratum)"""
        return RngStream(self.seed, self.stream_id, self.path + tuple(key))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


# ---------------------------------------------------------------------------
# Distribution specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise DomainError(f"Gamma requires shape > 0 and rate > 0, got {self}")

    def mean(self) -> float:
        return self.shape / self.rate

    def variance(self) -> float:
        return self.shape / self.rate ** 2


@dataclass(frozen=True)
class Beta:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError(f"Beta requires alpha > 0 and beta > 0, got {self}")

    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def variance(self) -> float:
        total = self.alpha + self.beta
        return self.alpha * self.beta / (total ** 2 * (total + 1.0))


@dataclass(frozen=True)
class Poisson:
    mu: float

    def __post_init__(self):
        if not self.mu >= 0:
            raise DomainError(f"Poisson requires mean >= 0, got {self.mu}")

    def mean(self) -> float:
        return self.mu

    def variance(self) -> float:
        return self.mu


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError(f"Exponential requires rate > 0, got {self.rate}")

    def mean(self) -> float:
        return 1.0 / self.rate

    def variance(self) -> float:
        return 1.0 / self.rate ** 2


@dataclass(frozen=True)
class GeometricOnPositives:
    """P(X = k) = p (1 - p)^(k - 1) on {1, 2, ...}"""
    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise DomainError(f"GeometricOnPositives requires 0 < p <= 1, got {self.p}")

    def mean(self) -> float:
        return 1.0 / self.p

    def variance(self) -> float:
        return (1.0 - self.p) / self.p ** 2


@dataclass(frozen=True)
class Multinomial:
    trials: int
    probs: Tuple[float, ...]

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if self.trials < 0:
            raise DomainError(f"Multinomial requires trials >= 0, got {self.trials}")
        if probs.ndim != 1 or probs.size == 0 or np.any(probs < 0):
            raise DomainError("Multinomial probs must be a non-empty non-negative vector")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise DomainError(f"Multinomial probs must sum to 1, got {probs.sum()}")

    def mean(self) -> np.ndarray:
        return self.trials * np.asarray(self.probs, dtype=float)

    def variance(self) -> np.ndarray:
        probs = np.asarray(self.probs, dtype=float)
        return self.trials * probs * (1.0 - probs)


@dataclass(frozen=True)
class FinitePmf:
    """Unnormalised non-negative weights over support offset, offset+1, ..."""
    weights: Tuple[float, ...]
    offset: int = 0
    _probs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or np.any(~np.isfinite(w)):
            raise DomainError("FinitePmf weights must be a finite non-negative vector")
        total = w.sum()
        if total <= 0:
            raise DomainError("FinitePmf needs at least one positive weight")
        object.__setattr__(self, "_probs", w / total)

    @classmethod
    def from_log_weights(cls, log_weights: np.ndarray, offset: int = 0) -> "FinitePmf":
        """Build from log-weights, rescaled by their maximum"""
        log_weights = np.asarray(log_weights, dtype=float)
        if log_weights.size == 0 or not np.any(np.isfinite(log_weights)):
            raise DomainError("FinitePmf needs at least one finite log-weight")
        return cls(tuple(np.exp(log_weights - np.max(log_weights))), offset)

    @property
    def support(self) -> np.ndarray:
        return self.offset + np.arange(self._probs.size)

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    def mean(self) -> float:
        return float(np.dot(self.support, self._probs))

    def variance(self) -> float:
        m = self.mean()
        return float(np.dot((self.support - m) ** 2, self._probs))


DistSpec = Union[Gamma, Beta, Poisson, Exponential, GeometricOnPositives, Multinomial, FinitePmf]


def draw(spec: DistSpec, rng: RngStream, size: Optional[int] = None):
    """Draw one variate (or `size` variates) from `spec` using `rng`"""
    gen = rng.generator
    if isinstance(spec, Gamma):
        return gen.gamma(spec.shape, 1.0 / spec.rate, size=size)
    if isinstance(spec, Beta):
        return gen.beta(spec.alpha, spec.beta, size=size)
    if isinstance(spec, Poisson):
        return gen.poisson(spec.mu, size=size)
    if isinstance(spec, Exponential):
        return gen.exponential(1.0 / spec.rate, size=size)
    if isinstance(spec, GeometricOnPositives):
        # numpy's geometric already counts trials, support {1, 2, ...}
        return gen.geometric(spec.p, size=size)
    if isinstance(spec, Multinomial):
        return gen.multinomial(spec.trials, np.asarray(spec.probs, dtype=float), size=size)
    if isinstance(spec, FinitePmf):
        return gen.choice(spec.support, size=size, p=spec.probs)
    raise DomainError(f"unknown distribution spec {spec!r}")
