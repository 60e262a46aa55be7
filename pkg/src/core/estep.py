"""Importance-sampling E-step over the latent clump counts.

Given the clump counts of a stratum, μ_s and the mark parameter have conjugate
conditionals:

    μ_s | N ~ Γ(a' + N₊, b' + D₊)
    ρ_s | N ~ Γ(c' + N₊, d' + Y₊)              (continuous)
    p_s | N ~ Beta(c' + N₊, d' + Y₊ - N₊)      (discrete)

so every conditional moment the M-step needs is an expectation over N₊ alone.
This module draws weighted particles of N and turns them into those moments.
`enumerate_posterior` gives the exact answer on small strata and is the
oracle for the samplers.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple, Union

import numpy as np
from scipy import special, stats as sps

from .exceptions import DomainError, EnumerationGuardError, ImportanceSamplingError
from .model import Kind, Stratum, Theta
from .specfun import FinitePmf, RngStream, digamma, draw, log_normalize

logger = logging.getLogger(__name__)

# Adaptive support of the N₊ proposal stops where the pmf falls below this
# fraction of its maximum
SUPPORT_RELATIVE_FLOOR = 1e-15
# Largest support the continuous N₊ proposal may grow to
MAX_SUPPORT = 10_000_000
# Rows of the discrete per-record pmf evaluated at once (G x y_i cells)
DISCRETE_BLOCK_CELLS = 2_000_000
N_REF_MARGIN = 0.01


@dataclass(frozen=True, eq=False)
class StratumStats:
    """Sufficient statistics of one stratum; non-zero records sorted canonically.

    `nonzero_index` maps each sorted non-zero record back to its position in
    the stratum.
    """
    Y_plus: float
    D_plus: float
    I: int
    I_plus: int
    nonzero_y: np.ndarray
    nonzero_D: np.ndarray
    nonzero_index: np.ndarray

    @property
    def all_zero(self) -> bool:
        return self.I_plus == 0


def stratum_stats(stratum: Stratum) -> StratumStats:
    """Exact sums; identical for any permutation of the records"""
    mask = stratum.y > 0
    positions = np.flatnonzero(mask)
    y_nz = stratum.y[mask]
    d_nz = stratum.effort[mask]
    order = np.lexsort((positions, d_nz, y_nz))
    y_nz, d_nz, positions = y_nz[order].copy(), d_nz[order].copy(), positions[order]
    for arr in (y_nz, d_nz, positions):
        arr.setflags(write=False)
    return StratumStats(
        Y_plus=math.fsum(y_nz),
        D_plus=math.fsum(stratum.effort),
        I=len(stratum),
        I_plus=int(mask.sum()),
        nonzero_y=y_nz,
        nonzero_D=d_nz,
        nonzero_index=positions,
    )


@dataclass(frozen=True)
class Particle:
    N: np.ndarray
    N_plus: int
    weight: float


class _Weighted:
    """Weight arithmetic shared by particle containers exposing n_plus and log_weights"""

    def __len__(self) -> int:
        return self.n_plus.size

    @property
    def weights(self) -> np.ndarray:
        """Self-normalised weights"""
        if not np.any(np.isfinite(self.log_weights)):
            raise ImportanceSamplingError("all importance weights are zero")
        return log_normalize(self.log_weights)

    @property
    def ess(self) -> float:
        """(Σw)² / Σw²"""
        lw = self.log_weights
        return float(np.exp(2.0 * special.logsumexp(lw) - special.logsumexp(2.0 * lw)))

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True, eq=False)
class NplusSample(_Weighted):
    """Weighted N₊ draws of one stratum; all the fit needs after the E-step"""
    n_plus: np.ndarray
    log_weights: np.ndarray
    truncation_mass: float = 0.0
    deterministic: bool = False


@dataclass(frozen=True, eq=False)
class ParticleSet(_Weighted):
    """G weighted particles of one stratum.

    `n` holds the clump counts of the non-zero records (G x I₊), column j
    belonging to record `index[j]` of the stratum; counts at zero records are
    identically 0 and not stored. Weights are kept as logs.
    """
    n: np.ndarray
    n_plus: np.ndarray
    log_weights: np.ndarray
    I: int
    index: np.ndarray
    truncation_mass: float = 0.0
    deterministic: bool = False

    def __iter__(self) -> Iterator[Particle]:
        raw = np.exp(self.log_weights - np.max(self.log_weights))
        for row, n_plus, w in zip(self.n, self.n_plus, raw):
            full = np.zeros(self.I, dtype=np.int64)
            full[self.index] = row
            yield Particle(full, int(n_plus), float(w))

    def nplus_sample(self) -> NplusSample:
        return NplusSample(self.n_plus, self.log_weights, self.truncation_mass, self.deterministic)


WeightedParticles = Union[ParticleSet, NplusSample]


@dataclass(frozen=True)
class StratumMoments:
    """Conditional expectations consumed by the M-step.

    Continuous fits fill e_rho / e_ln_rho, discrete fits e_ln_p / e_ln_1mp.
    """
    e_mu: float
    e_ln_mu: float
    e_n_plus: float
    ess: float
    e_rho: Optional[float] = None
    e_ln_rho: Optional[float] = None
    e_ln_p: Optional[float] = None
    e_ln_1mp: Optional[float] = None
    truncation_mass: float = 0.0


def _deterministic_particles(stats: StratumStats, G: int, n_row: Optional[np.ndarray] = None) -> ParticleSet:
    if n_row is None:
        n = np.zeros((G, 0), dtype=np.int64)
    else:
        n = np.tile(np.asarray(n_row, dtype=np.int64), (G, 1))
    return ParticleSet(n=n, n_plus=n.sum(axis=1), log_weights=np.zeros(G), I=stats.I,
                       index=stats.nonzero_index, deterministic=True)


# ---------------------------------------------------------------------------
# Continuous case
# ---------------------------------------------------------------------------

def _mark_proportions(stats: StratumStats) -> Tuple[np.ndarray, float]:
    """Multinomial cell probabilities π_i ∝ y_i D_i and their normaliser W"""
    yd = stats.nonzero_y * stats.nonzero_D
    total = float(yd.sum())
    return yd / total, total


def _log_f_is(n_plus: np.ndarray, stats: StratumStats, theta: Theta, pi: np.ndarray, w_total: float) -> np.ndarray:
    slope = math.log(w_total) - math.log(theta.b + stats.D_plus) - math.log(theta.d + stats.Y_plus)
    n = n_plus.astype(float)
    return (
        n * slope
        + special.gammaln(theta.a + n)
        + special.gammaln(theta.c + n)
        - special.gammaln(np.outer(n, pi) + 1.0).sum(axis=1)
        - special.gammaln(n - stats.I_plus + 1.0)
    )


def nplus_proposal_continuous(stats: StratumStats, theta_prime: Theta) -> Tuple[FinitePmf, float]:
    """One-dimensional importance pmf of N₊ on {I₊, ..., cap} and the mass it drops.

    With unit efforts the pmf is
        (Y₊ / ((b' + D₊)(d' + Y₊)))^N Γ(a' + N) Γ(c' + N) / (∏ Γ(N y_i / Y₊ + 1) Γ(N - I₊ + 1)).
    Unequal efforts replace y_i / Y₊ by y_i D_i / Σ y_j D_j and Y₊ in the
    numerator by Σ y_j D_j.
    """
    pi, w_total = _mark_proportions(stats)
    rho_scale = max(theta_prime.c / theta_prime.d, 1.0)
    hard_cap = stats.I_plus + 10 * math.ceil(stats.Y_plus * rho_scale)
    hard_cap = max(hard_cap, stats.I_plus + 50)

    while True:
        support = np.arange(stats.I_plus, hard_cap + 1)
        log_f = _log_f_is(support, stats, theta_prime, pi, w_total)
        if not np.all(np.isfinite(log_f)):
            raise ImportanceSamplingError("N+ proposal normalisation underflowed; theta' is pathological")
        floor = np.max(log_f) + math.log(SUPPORT_RELATIVE_FLOOR)
        if log_f[-1] < floor or hard_cap >= MAX_SUPPORT:
            break
        # tail still heavy at the cap
        hard_cap = min(2 * hard_cap, MAX_SUPPORT)

    keep = np.nonzero(log_f >= floor)[0]
    cut = int(keep[-1]) + 1
    total = special.logsumexp(log_f)
    dropped = float(np.exp(special.logsumexp(log_f[cut:]) - total)) if cut < log_f.size else 0.0
    # residual tail beyond the hard cap, estimated by the boundary point
    dropped += float(np.exp(log_f[-1] - total))
    if dropped > 1e-12:
        logger.warning(f"N+ proposal truncation mass {dropped:.2e} (cap {hard_cap})")
    return FinitePmf.from_log_weights(log_f[:cut], offset=stats.I_plus), dropped


def sample_particles_continuous(stats: StratumStats, theta_prime: Theta, G: int, rng: RngStream) -> ParticleSet:
    """Draw G particles: N₊ from its importance pmf, then the split of N₊ - I₊
    extra clumps across non-zero records by a multinomial, weighted by
    ∏ Γ(N₊ π_i + 1) / Γ(N_i + 1)."""
    if G < 1:
        raise DomainError(f"G must be >= 1, got {G}")
    if stats.all_zero:
        return _deterministic_particles(stats, G)

    proposal, dropped = nplus_proposal_continuous(stats, theta_prime)
    pi, _ = _mark_proportions(stats)
    n_plus = np.asarray(draw(proposal, rng, size=G), dtype=np.int64)
    extra = rng.generator.multinomial(n_plus - stats.I_plus, pi)
    n = 1 + extra
    log_w = (
        special.gammaln(np.outer(n_plus.astype(float), pi) + 1.0).sum(axis=1)
        - special.gammaln(n + 1.0).sum(axis=1)
    )
    return ParticleSet(n=n, n_plus=n_plus, log_weights=log_w, I=stats.I,
                       index=stats.nonzero_index, truncation_mass=dropped)


def _moments_mu(particles: WeightedParticles, stats: StratumStats, theta_prime: Theta) -> Tuple[np.ndarray, float, float, float]:
    w = particles.weights
    n_plus = particles.n_plus.astype(float)
    e_n = float(np.dot(w, n_plus))
    rate = theta_prime.b + stats.D_plus
    e_mu = (theta_prime.a + e_n) / rate
    e_ln_mu = float(np.dot(w, digamma(theta_prime.a + n_plus))) - math.log(rate)
    return w, e_n, e_mu, e_ln_mu


def moments_continuous(particles: WeightedParticles, stats: StratumStats, theta_prime: Theta) -> StratumMoments:
    w, e_n, e_mu, e_ln_mu = _moments_mu(particles, stats, theta_prime)
    n_plus = particles.n_plus.astype(float)
    rate_rho = theta_prime.d + stats.Y_plus
    return StratumMoments(
        e_mu=e_mu,
        e_ln_mu=e_ln_mu,
        e_n_plus=e_n,
        ess=particles.ess,
        e_rho=(theta_prime.c + e_n) / rate_rho,
        e_ln_rho=float(np.dot(w, digamma(theta_prime.c + n_plus))) - math.log(rate_rho),
        truncation_mass=particles.truncation_mass,
    )


# ---------------------------------------------------------------------------
# Discrete case
# ---------------------------------------------------------------------------

def reference_nplus_pmf(stats: StratumStats, theta_prime: Theta) -> FinitePmf:
    """Law of N₊ given only the stratum totals (Y₊, D₊), on {I₊, ..., Y₊}"""
    y_plus = int(round(stats.Y_plus))
    if y_plus < 1 or stats.I_plus > y_plus:
        raise DomainError(f"reference N+ support is empty (Y+={stats.Y_plus}, I+={stats.I_plus})")
    t = theta_prime
    n = np.arange(stats.I_plus, y_plus + 1, dtype=float)
    log_g = (
        special.gammaln(t.a + n)
        + special.gammaln(t.c + n)
        + special.gammaln(t.d + y_plus - n)
        + n * (math.log(stats.D_plus) - math.log(t.b + stats.D_plus))
        - special.gammaln(n + 1.0)
        - special.gammaln(n)
        - special.gammaln(y_plus - n + 1.0)
    )
    return FinitePmf.from_log_weights(log_g, offset=stats.I_plus)


def reference_nplus_discrete(stats: StratumStats, theta_prime: Theta, L: int, rng: RngStream) -> float:
    """Mean of L draws from the totals-only law of N₊; locates the mixture proposal"""
    if L < 1:
        raise DomainError(f"L must be >= 1, got {L}")
    pmf = reference_nplus_pmf(stats, theta_prime)
    return float(np.mean(draw(pmf, rng, size=L)))


def _draw_record_counts(y_i: int, log_rate: np.ndarray, gen: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Draw N_i in {1..y_i} with P ∝ r^k / (Γ(k) Γ(y_i - k + 1) Γ(k + 1)) for each row's
    log r; returns the draws and the log normalisers"""
    k = np.arange(1, y_i + 1, dtype=float)
    base = -special.gammaln(k) - special.gammaln(y_i - k + 1.0) - special.gammaln(k + 1.0)
    G = log_rate.size
    out = np.empty(G, dtype=np.int64)
    log_z = np.empty(G)
    block = max(1, DISCRETE_BLOCK_CELLS // y_i)
    for start in range(0, G, block):
        stop = min(G, start + block)
        log_terms = np.outer(log_rate[start:stop], k) + base
        peak = log_terms.max(axis=1, keepdims=True)
        cdf = np.cumsum(np.exp(log_terms - peak), axis=1)
        u = gen.random(stop - start) * cdf[:, -1]
        out[start:stop] = 1 + (cdf < u[:, None]).sum(axis=1)
        log_z[start:stop] = peak[:, 0] + np.log(cdf[:, -1])
    return out, log_z


def sample_particles_discrete(stats: StratumStats, theta_prime: Theta, n_ref: float, G: int,
                              rng: RngStream) -> ParticleSet:
    """Mixture proposal: per particle draw μ ~ Γ(a' + n_ref, b' + D₊) and
    p ~ Beta(c' + n_ref, d' + Y₊ - n_ref), then each N_i from its exact
    conditional given (μ, p, y_i).

    The weight is the joint target density of (μ, p, N) over the joint
    proposal density. Because N is drawn from its exact conditional, the N
    terms cancel and only the (μ, p) marginal posterior over the gamma-beta
    proposal remains.
    """
    if G < 1:
        raise DomainError(f"G must be >= 1, got {G}")
    if stats.all_zero:
        return _deterministic_particles(stats, G)
    y = np.rint(stats.nonzero_y).astype(np.int64)
    y_plus = int(y.sum())
    if np.all(y == 1):
        # every non-zero record holds exactly one clump
        return _deterministic_particles(stats, G, n_row=y)

    if not (0.0 < n_ref <= y_plus + N_REF_MARGIN):
        raise DomainError(f"n_ref={n_ref} outside (0, Y+={y_plus}]")
    n_ref = float(np.clip(n_ref, stats.I_plus + N_REF_MARGIN, y_plus - N_REF_MARGIN))

    t = theta_prime
    gen = rng.generator
    shape_mu, rate_mu = t.a + n_ref, t.b + stats.D_plus
    alpha_p, beta_p = t.c + n_ref, t.d + y_plus - n_ref
    mu = gen.gamma(shape_mu, 1.0 / rate_mu, size=G)
    p = np.clip(gen.beta(alpha_p, beta_p, size=G), 1e-300, 1.0 - 1e-16)
    log_mu, log_p, log_1mp = np.log(mu), np.log(p), np.log1p(-p)

    n = np.empty((G, y.size), dtype=np.int64)
    log_z_sum = np.zeros(G)
    for i, (y_i, d_i) in enumerate(zip(y, stats.nonzero_D)):
        log_rate = log_mu + math.log(d_i) + log_p - log_1mp
        n[:, i], log_z = _draw_record_counts(int(y_i), log_rate, gen)
        log_z_sum += log_z

    log_target = (
        (t.a - 1.0) * log_mu - (t.b + stats.D_plus) * mu
        + (t.c - 1.0) * log_p + (t.d - 1.0) * log_1mp
        + y_plus * log_1mp
        + float(special.gammaln(y.astype(float)).sum())
        + log_z_sum
    )
    log_proposal = (
        sps.gamma.logpdf(mu, shape_mu, scale=1.0 / rate_mu)
        + sps.beta.logpdf(p, alpha_p, beta_p)
    )
    log_w = log_target - log_proposal
    if not np.any(np.isfinite(log_w)):
        raise ImportanceSamplingError("discrete mixture proposal produced no finite weight")
    return ParticleSet(n=n, n_plus=n.sum(axis=1), log_weights=log_w, I=stats.I, index=stats.nonzero_index)


def moments_discrete(particles: WeightedParticles, stats: StratumStats, theta_prime: Theta) -> StratumMoments:
    w, e_n, e_mu, e_ln_mu = _moments_mu(particles, stats, theta_prime)
    n_plus = particles.n_plus.astype(float)
    psi_total = digamma(theta_prime.c + theta_prime.d + stats.Y_plus)
    return StratumMoments(
        e_mu=e_mu,
        e_ln_mu=e_ln_mu,
        e_n_plus=e_n,
        ess=particles.ess,
        e_ln_p=float(np.dot(w, digamma(theta_prime.c + n_plus))) - psi_total,
        e_ln_1mp=float(np.dot(w, digamma(theta_prime.d + stats.Y_plus - n_plus))) - psi_total,
        truncation_mass=particles.truncation_mass,
    )


def moments_from(particles: WeightedParticles, stats: StratumStats, theta_prime: Theta, kind) -> StratumMoments:
    if Kind.parse(kind) is Kind.CONTINUOUS:
        return moments_continuous(particles, stats, theta_prime)
    return moments_discrete(particles, stats, theta_prime)


def run_estep(stats: StratumStats, theta_prime: Theta, kind, G: int, L_ref: int,
              rng: RngStream) -> Tuple[ParticleSet, StratumMoments]:
    """Particles and conditional moments of one stratum"""
    kind = Kind.parse(kind)
    if kind is Kind.CONTINUOUS:
        particles = sample_particles_continuous(stats, theta_prime, G, rng)
    elif stats.all_zero:
        particles = _deterministic_particles(stats, G)
    else:
        n_ref = reference_nplus_discrete(stats, theta_prime, L_ref, rng.spawn(0))
        particles = sample_particles_discrete(stats, theta_prime, n_ref, G, rng.spawn(1))
    moments = moments_from(particles, stats, theta_prime, kind)
    if not particles.deterministic and moments.ess < G / 1000.0:
        logger.warning(f"importance weights degenerate: ESS {moments.ess:.1f} for G={G}")
    return particles, moments


# ---------------------------------------------------------------------------
# Exact enumeration (test oracle and marginal likelihood)
# ---------------------------------------------------------------------------

CONTINUOUS_MAX_NONZERO = 3
CONTINUOUS_MAX_CAP = 80
DISCRETE_MAX_LATTICE = 1_000_000


@dataclass(frozen=True, eq=False)
class PosteriorTable:
    """Exact posterior of the non-zero clump counts on a finite lattice"""
    lattice: np.ndarray
    log_joint: np.ndarray
    probs: np.ndarray
    log_marginal: float
    boundary_mass: float

    @property
    def n_plus(self) -> np.ndarray:
        return self.lattice.sum(axis=1)

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(self.probs, values))

    def as_particles(self, stats: StratumStats) -> ParticleSet:
        """Exact table viewed as a weighted particle set of the stratum it came from"""
        with np.errstate(divide="ignore"):
            log_w = np.log(self.probs)
        return ParticleSet(n=self.lattice, n_plus=self.n_plus, log_weights=log_w, I=stats.I, index=stats.nonzero_index)


def log_joint_terms(stats: StratumStats, theta: Theta, kind, lattice: np.ndarray) -> np.ndarray:
    """ln [y, N | θ] for each lattice row (random effects integrated out)"""
    kind = Kind.parse(kind)
    n = lattice.astype(float)
    n_plus = n.sum(axis=1)
    y = stats.nonzero_y
    log_d = np.log(stats.nonzero_D) if stats.I_plus else np.zeros(0)
    t = theta
    mu_part = (
        t.a * math.log(t.b) - special.gammaln(t.a)
        + special.gammaln(t.a + n_plus) - (t.a + n_plus) * math.log(t.b + stats.D_plus)
    )
    if stats.I_plus == 0:
        records = np.zeros(n.shape[0])
    elif kind is Kind.CONTINUOUS:
        records = (
            n @ log_d + (n - 1.0) @ np.log(y)
            - special.gammaln(n).sum(axis=1) - special.gammaln(n + 1.0).sum(axis=1)
        )
    else:
        records = (
            n @ log_d - special.gammaln(n + 1.0).sum(axis=1)
            + special.gammaln(y).sum()
            - special.gammaln(n).sum(axis=1) - special.gammaln(y - n + 1.0).sum(axis=1)
        )
    if kind is Kind.CONTINUOUS:
        mark_part = (
            t.c * math.log(t.d) - special.gammaln(t.c)
            + special.gammaln(t.c + n_plus) - (t.c + n_plus) * math.log(t.d + stats.Y_plus)
        )
    else:
        mark_part = (
            special.betaln(t.c + n_plus, t.d + stats.Y_plus - n_plus) - special.betaln(t.c, t.d)
        )
    return mu_part + records + mark_part


def enumerate_posterior(stats: StratumStats, theta_prime: Theta, kind, cap: int = 60) -> PosteriorTable:
    """Exact posterior of N over the (truncated) lattice.

    Continuous strata enumerate {1..cap}^I₊ and need I₊ <= 3, cap <= 80;
    discrete strata enumerate ∏ {1..y_i} and need ∏ y_i <= 10⁶.
    """
    kind = Kind.parse(kind)
    if stats.all_zero:
        lattice = np.zeros((1, 0), dtype=np.int64)
        ranges = []
    elif kind is Kind.CONTINUOUS:
        if stats.I_plus > CONTINUOUS_MAX_NONZERO or cap > CONTINUOUS_MAX_CAP or cap < 1:
            raise EnumerationGuardError(
                f"continuous enumeration needs I+ <= {CONTINUOUS_MAX_NONZERO} and 1 <= cap <= "
                f"{CONTINUOUS_MAX_CAP}, got I+={stats.I_plus}, cap={cap}"
            )
        ranges = [np.arange(1, cap + 1)] * stats.I_plus
    else:
        y = np.rint(stats.nonzero_y).astype(np.int64)
        if float(np.prod(y.astype(float))) > DISCRETE_MAX_LATTICE:
            raise EnumerationGuardError(f"discrete lattice of size {np.prod(y.astype(float)):.0f} exceeds 1e6")
        ranges = [np.arange(1, int(v) + 1) for v in y]
    if ranges:
        lattice = np.array(list(itertools.product(*ranges)), dtype=np.int64)

    log_joint = log_joint_terms(stats, theta_prime, kind, lattice)
    log_marginal = float(special.logsumexp(log_joint))
    probs = np.exp(log_joint - log_marginal)
    boundary_mass = 0.0
    if kind is Kind.CONTINUOUS and stats.I_plus:
        boundary_mass = float(probs[np.any(lattice == cap, axis=1)].sum())
    return PosteriorTable(lattice=lattice, log_joint=log_joint, probs=probs,
                          log_marginal=log_marginal, boundary_mass=boundary_mass)


def exact_moments(stats: StratumStats, theta_prime: Theta, kind, cap: int = 60) -> StratumMoments:
    """StratumMoments computed from the exact posterior table"""
    table = enumerate_posterior(stats, theta_prime, kind, cap)
    return moments_from(table.as_particles(stats), stats, theta_prime, kind)
