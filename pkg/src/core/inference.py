"""MCEM driver, score and information matrix, confidence regions and
random-effect predictors"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .estep import (
    NplusSample,
    StratumMoments,
    StratumStats,
    WeightedParticles,
    enumerate_posterior,
    moments_from,
    run_estep,
    stratum_stats,
)
from .exceptions import (
    ConvergenceError,
    DomainError,
    EnumerationGuardError,
    NotPositiveDefiniteError,
    UnidentifiableError,
    ZicpError,
)
from .model import Dataset, Kind, Theta
from .mstep import MStepInput, maximize, q_value
from .schemas import FitReport, IntervalModel, McemConfig, StratumReport
from .specfun import RngStream, chi2_quantile, digamma, normal_quantile, trigamma

logger = logging.getLogger(__name__)

COMPONENTS = ("a", "b", "c", "d")


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StratumEstimate:
    """Per-stratum fixed-effect moment estimates on effort-standardised data"""
    stratum: str
    n: int
    n_nonzero: int
    zero_fraction: float
    mu: Optional[float]
    mark: Optional[float]


def per_stratum_estimates(dataset: Dataset) -> List[StratumEstimate]:
    """Method of moments in every stratum, random effects treated as fixed.

    Continuous: E = μ/ρ and Var = 2μ/ρ² per unit effort give ρ = 2m/v, μ = 2m²/v.
    Discrete: E = μ/p and Var = μ(2 - p)/p² give p = 2/(v/m + 1), μ = m p.
    Strata with fewer than two non-zero records get no estimate.
    """
    out = []
    for stratum in dataset.strata:
        x = stratum.y / stratum.effort
        n_nonzero = int(np.sum(stratum.y > 0))
        mu = mark = None
        if n_nonzero >= 2 and x.size >= 2:
            m = float(stratum.y.sum() / stratum.effort.sum())
            v = float(np.var(x, ddof=1) * np.mean(stratum.effort))
            if m > 0 and v > 0:
                if dataset.kind is Kind.CONTINUOUS:
                    mark = 2.0 * m / v
                    mu = 2.0 * m * m / v
                else:
                    mark = float(np.clip(2.0 / (v / m + 1.0), 0.01, 0.99))
                    mu = m * mark
        out.append(StratumEstimate(stratum.id, len(stratum), n_nonzero, 1.0 - n_nonzero / len(stratum), mu, mark))
    return out


def gamma_moment_match(values: Sequence[float]) -> Tuple[float, float]:
    """(shape, rate) of the gamma law with the sample mean and variance of `values`"""
    x = np.asarray(values, dtype=float)
    if x.size == 0 or np.any(x <= 0):
        raise DomainError("gamma moment matching needs positive values")
    m = float(x.mean())
    v = float(x.var(ddof=1)) if x.size > 1 else 0.0
    if v <= 0:
        return 1.0, 1.0 / m
    return m * m / v, m / v


def beta_moment_match(values: Sequence[float]) -> Tuple[float, float]:
    x = np.asarray(values, dtype=float)
    if x.size == 0 or np.any((x <= 0) | (x >= 1)):
        raise DomainError("beta moment matching needs values in (0, 1)")
    m = float(x.mean())
    v = float(x.var(ddof=1)) if x.size > 1 else 0.0
    common = m * (1.0 - m) / v - 1.0 if v > 0 else -1.0
    if common <= 0:
        return 2.0 * m, 2.0 * (1.0 - m)
    return m * common, (1.0 - m) * common


def initial_theta(dataset: Dataset) -> Theta:
    """Moment-matched starting point, clipped into a moderate box"""
    estimates = [e for e in per_stratum_estimates(dataset) if e.mu is not None]
    if estimates:
        a, b = gamma_moment_match([e.mu for e in estimates])
        if dataset.kind is Kind.CONTINUOUS:
            c, d = gamma_moment_match([e.mark for e in estimates])
        else:
            c, d = beta_moment_match([e.mark for e in estimates])
    else:
        # too few non-zero records anywhere: start from the pooled mean
        pooled = sum(float(s.y.sum()) for s in dataset.strata) / sum(float(s.effort.sum()) for s in dataset.strata)
        a, b = 1.0, 1.0 / max(pooled, 1e-3)
        c, d = 1.0, 1.0
    clip = lambda v: float(np.clip(v, 0.05, 1e3))
    return Theta(clip(a), clip(b), clip(c), clip(d))


# ---------------------------------------------------------------------------
# E-step fan-out
# ---------------------------------------------------------------------------

def estep_all(stats: Sequence[StratumStats], theta: Theta, kind, G: int, L_ref: int, rng: RngStream,
              threads: int = 1) -> Tuple[List[NplusSample], List[StratumMoments]]:
    """E-step of every stratum; stratum s draws from rng.spawn(s)"""
    def task(s: int):
        particles, moments = run_estep(stats[s], theta, kind, G, L_ref, rng.spawn(s))
        return particles.nplus_sample(), moments

    if threads > 1 and len(stats) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(stats))) as pool:
            results = list(pool.map(task, range(len(stats))))
    else:
        results = [task(s) for s in range(len(stats))]
    return [r[0] for r in results], [r[1] for r in results]


# ---------------------------------------------------------------------------
# Score, information, covariance
# ---------------------------------------------------------------------------

def score_from_moments(theta: Theta, moments: Sequence[StratumMoments], kind) -> np.ndarray:
    """Conditional expectation of the complete-data score: fixed part plus the
    averaged latent part"""
    kind = Kind.parse(kind)
    inp = MStepInput.from_moments(moments, kind)
    t, S = theta, inp.S
    score_mu = [
        S * (math.log(t.b) - digamma(t.a) + inp.e_ln_mu),
        S * (t.a / t.b - inp.e_mu),
    ]
    if kind is Kind.CONTINUOUS:
        score_mark = [
            S * (math.log(t.d) - digamma(t.c) + inp.mark_2),
            S * (t.c / t.d - inp.mark_1),
        ]
    else:
        psi_cd = digamma(t.c + t.d)
        score_mark = [
            S * (psi_cd - digamma(t.c) + inp.mark_1),
            S * (psi_cd - digamma(t.d) + inp.mark_2),
        ]
    return np.array(score_mu + score_mark)


def score_monitor(dataset_or_stats, theta: Theta, samples: Sequence[WeightedParticles], kind) -> np.ndarray:
    """Score of the observed-data log-likelihood at θ, estimated from particles drawn at θ"""
    stats = _as_stats(dataset_or_stats)
    moments = [moments_from(sample, st, theta, kind) for sample, st in zip(samples, stats)]
    return score_from_moments(theta, moments, kind)


def _as_stats(dataset_or_stats) -> List[StratumStats]:
    if isinstance(dataset_or_stats, Dataset):
        return [stratum_stats(s) for s in dataset_or_stats.strata]
    return list(dataset_or_stats)


def _gamma_block(shape, rate) -> np.ndarray:
    """−Hessian of a ln b − ln Γ(a) + (a − 1) ln x − b x in (a, b), batched.

    The same matrix is the covariance of (ln x, −x) under Γ(a, b).
    """
    shape, rate = np.broadcast_arrays(np.asarray(shape, float), np.asarray(rate, float))
    block = np.empty(shape.shape + (2, 2))
    block[..., 0, 0] = trigamma(shape)
    block[..., 0, 1] = block[..., 1, 0] = -1.0 / rate
    block[..., 1, 1] = shape / rate ** 2
    return block


def _beta_block(alpha, beta) -> np.ndarray:
    """Covariance of (ln p, ln(1 - p)) under Beta(α, β), batched; also the
    −Hessian of −ln B(c, d) in (c, d)"""
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(beta, float))
    tri_total = trigamma(alpha + beta)
    block = np.empty(alpha.shape + (2, 2))
    block[..., 0, 0] = trigamma(alpha) - tri_total
    block[..., 0, 1] = block[..., 1, 0] = -tri_total
    block[..., 1, 1] = trigamma(beta) - tri_total
    return block


def _latent_blocks(theta: Theta, st: StratumStats, n_plus: np.ndarray, kind: Kind) -> Tuple[np.ndarray, np.ndarray]:
    """Conditional covariance (G x 4 x 4) and mean (G x 4) of the latent score
    vector (ln μ, −μ, ln ρ, −ρ) or (ln μ, −μ, ln p, ln(1 − p)) given N₊"""
    t = theta
    n = n_plus.astype(float)
    a_star, b_star = t.a + n, np.full_like(n, t.b + st.D_plus)
    cov = np.zeros((n.size, 4, 4))
    mean = np.empty((n.size, 4))
    # Var(ln μ) = ψ'(a*), Cov(ln μ, −μ) = −1/b*, Var(μ) = a*/b*²
    cov[:, :2, :2] = _gamma_block(a_star, b_star)
    mean[:, 0] = digamma(a_star) - np.log(b_star)
    mean[:, 1] = -a_star / b_star
    if kind is Kind.CONTINUOUS:
        c_star, d_star = t.c + n, np.full_like(n, t.d + st.Y_plus)
        cov[:, 2:, 2:] = _gamma_block(c_star, d_star)
        mean[:, 2] = digamma(c_star) - np.log(d_star)
        mean[:, 3] = -c_star / d_star
    else:
        c_star, d_star = t.c + n, t.d + st.Y_plus - n
        cov[:, 2:, 2:] = _beta_block(c_star, d_star)
        psi_total = digamma(t.c + t.d + st.Y_plus)
        mean[:, 2] = digamma(c_star) - psi_total
        mean[:, 3] = digamma(d_star) - psi_total
    return cov, mean


def fixed_information(theta: Theta, kind) -> np.ndarray:
    """−Hessian of one stratum's complete-data log-likelihood in θ (data-free)"""
    F = np.zeros((4, 4))
    F[:2, :2] = _gamma_block(theta.a, theta.b)
    if Kind.parse(kind) is Kind.CONTINUOUS:
        F[2:, 2:] = _gamma_block(theta.c, theta.d)
    else:
        F[2:, 2:] = _beta_block(theta.c, theta.d)
    return F


def fisher_information(dataset_or_stats, theta_hat: Theta, samples: Sequence[WeightedParticles], kind) -> np.ndarray:
    """Observed information by the missing-information identity:

        I(θ̂) = S·F(θ̂) − Σ_s (A_s + B_s)

    with A_s the weighted mean of the conditional covariance of the latent
    score given N₊ and B_s the weighted covariance of its conditional mean.
    """
    kind = Kind.parse(kind)
    stats = _as_stats(dataset_or_stats)
    if len(stats) != len(samples):
        raise DomainError("one particle sample per stratum is required")
    info = len(stats) * fixed_information(theta_hat, kind)
    for st, sample in zip(stats, samples):
        w = sample.weights
        cov, mean = _latent_blocks(theta_hat, st, np.asarray(sample.n_plus), kind)
        A = np.einsum("g,gij->ij", w, cov)
        centred = mean - w @ mean
        B = np.einsum("g,gi,gj->ij", w, centred, centred)
        info -= A + B
    asym = np.max(np.abs(info - info.T))
    if asym > 1e-10 * max(1.0, np.max(np.abs(info))):
        raise ZicpError(f"information matrix assembled asymmetric (max gap {asym:.3e})")
    return 0.5 * (info + info.T)


def covariance_from_fisher(fisher: np.ndarray) -> np.ndarray:
    """Inverse through a Cholesky factorisation; never pseudo-inverted"""
    try:
        factor = linalg.cho_factor(fisher, lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"information matrix is not positive definite: {e}") from e
    cov = linalg.cho_solve(factor, np.eye(fisher.shape[0]))
    return 0.5 * (cov + cov.T)


def correlation(covariance: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.diag(covariance))
    if np.any(sd <= 0):
        raise NotPositiveDefiniteError("covariance has a non-positive diagonal entry")
    return covariance / np.outer(sd, sd)


# ---------------------------------------------------------------------------
# Confidence regions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConfidenceRegion:
    level: float
    center: Theta
    intervals: Dict[str, Tuple[float, float]]
    precision: np.ndarray
    radius2: float

    def contains(self, theta: Theta) -> bool:
        """Ellipsoid membership"""
        delta = theta.as_array() - self.center.as_array()
        return bool(delta @ self.precision @ delta <= self.radius2)

    def covers(self, theta: Theta) -> Dict[str, bool]:
        """Per-component interval membership"""
        return {k: lo <= v <= hi for (k, (lo, hi)), v in zip(self.intervals.items(), theta.as_array())}


def wald_interval(estimate: float, variance: float, level: float) -> Tuple[float, float]:
    half = normal_quantile(0.5 + level / 2.0) * math.sqrt(variance)
    return estimate - half, estimate + half


def confidence_region(theta_hat: Theta, covariance: np.ndarray, level: float) -> ConfidenceRegion:
    """Wald intervals θ̂_k ± z·√cov_kk and the χ²₄ ellipsoid around θ̂"""
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    covariance = np.asarray(covariance, dtype=float)
    precision = covariance_from_fisher(covariance)
    center = theta_hat.as_array()
    intervals = {
        k: wald_interval(center[i], covariance[i, i], level) for i, k in enumerate(COMPONENTS)
    }
    return ConfidenceRegion(level, theta_hat, intervals, precision, chi2_quantile(level, 4))


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StratumPredictor:
    stratum: str
    mu: float
    mark: float  # ρ (continuous) or p (discrete)


def predict_random_effects(dataset: Dataset, theta_hat: Theta, samples: Sequence[WeightedParticles],
                           kind=None) -> List[StratumPredictor]:
    """Posterior means of μ_s and ρ_s (or p_s) at θ̂"""
    kind = Kind.parse(kind or dataset.kind)
    t = theta_hat
    out = []
    for stratum, sample in zip(dataset.strata, samples):
        st = stratum_stats(stratum)
        e_n = sample.expect(np.asarray(sample.n_plus, dtype=float))
        mu = (t.a + e_n) / (t.b + st.D_plus)
        if kind is Kind.CONTINUOUS:
            mark = (t.c + e_n) / (t.d + st.Y_plus)
        else:
            mark = (t.c + e_n) / (t.c + t.d + st.Y_plus)
        out.append(StratumPredictor(stratum.id, mu, mark))
    return out


# ---------------------------------------------------------------------------
# Marginal likelihood
# ---------------------------------------------------------------------------

def marginal_loglik(dataset: Dataset, theta: Theta, caps: Union[int, Sequence[int], None] = None) -> float:
    """ln [y | θ] summed over strata by exact enumeration of the clump counts.

    Only small strata are accepted (see `enumerate_posterior`); `caps` bounds
    each continuous count and defaults to 60.
    """
    if caps is None or isinstance(caps, (int, np.integer)):
        caps = [int(caps or 60)] * dataset.n_strata
    total = 0.0
    for stratum, cap in zip(dataset.strata, caps):
        table = enumerate_posterior(stratum_stats(stratum), theta, dataset.kind, cap)
        if table.boundary_mass > 1e-12:
            logger.warning(f"stratum {stratum.id}: mass {table.boundary_mass:.2e} at the enumeration cap {cap}")
        total += table.log_marginal
    return total


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StratumDiagnostics:
    stratum: str
    ess: float
    truncation_mass: float
    e_n_plus: float


@dataclass(frozen=True, eq=False)
class FitResult:
    kind: Kind
    theta_hat: Theta
    iterations: int
    converged: bool
    trajectory: List[Theta]
    score: np.ndarray
    fisher: np.ndarray
    covariance: Optional[np.ndarray]
    predictors: List[StratumPredictor]
    diagnostics: List[StratumDiagnostics]
    config: McemConfig
    flags: List[str] = field(default_factory=list)
    loglik_trajectory: Optional[List[float]] = None

    def confidence_region(self, level: Optional[float] = None) -> ConfidenceRegion:
        if self.covariance is None:
            raise NotPositiveDefiniteError("fit has no covariance (information matrix not positive definite)")
        return confidence_region(self.theta_hat, self.covariance, level or self.config.level)

    def to_report(self) -> FitReport:
        intervals = radius = corr = None
        if self.covariance is not None:
            region = self.confidence_region()
            intervals = {k: IntervalModel(lower=lo, upper=hi) for k, (lo, hi) in region.intervals.items()}
            radius = region.radius2
            corr = correlation(self.covariance).tolist()
        return FitReport(
            kind=self.kind,
            theta_hat=self.theta_hat.to_dict(),
            converged=self.converged,
            iterations=self.iterations,
            trajectory=[t.as_array().tolist() for t in self.trajectory],
            score=self.score.tolist(),
            fisher=self.fisher.tolist(),
            covariance=None if self.covariance is None else self.covariance.tolist(),
            correlation=corr,
            level=self.config.level,
            intervals=intervals,
            chi2_radius=radius,
            strata=[
                StratumReport(stratum=p.stratum, mu_pred=p.mu, mark_pred=p.mark, e_n_plus=d.e_n_plus,
                              ess=d.ess, truncation_mass=d.truncation_mass)
                for p, d in zip(self.predictors, self.diagnostics)
            ],
            flags=list(self.flags),
            loglik_trajectory=self.loglik_trajectory,
            config=self.config,
        )

    def to_json(self) -> str:
        return self.to_report().model_dump_json(indent=2)


def _window_mean(trajectory: Sequence[Theta], window: int) -> np.ndarray:
    return np.mean([t.as_array() for t in trajectory[-window:]], axis=0)


def stopping_change(trajectory: Sequence[Theta], window: int, relative: bool = False) -> float:
    """Largest componentwise move of the `window`-iterate moving average over the last step"""
    if len(trajectory) <= window:
        return math.inf
    current = _window_mean(trajectory, window)
    change = np.abs(current - _window_mean(trajectory[:-1], window))
    if relative:
        change = change / np.maximum(1.0, np.abs(current))
    return float(np.max(change))


def mcem_fit(dataset: Dataset, config: Optional[McemConfig] = None, rng: Optional[RngStream] = None) -> FitResult:
    """Monte-Carlo EM from a moment-matched start.

    Iteration k draws G_for(k) particles per stratum, solves the M-step and
    stops once the moving average of the last `window` iterates changes by
    less than 10^-stop_decimals in every component (relative to max(1, |θ|)
    when `stop_relative` is set). A last E-step at the estimate feeds the
    score, information matrix and predictors.
    """
    config = config or McemConfig(kind=dataset.kind)
    kind = dataset.kind
    if dataset.all_zero():
        raise UnidentifiableError("every observation is zero: the mark parameters are unidentifiable")
    rng = rng or RngStream(config.seed)
    stats = [stratum_stats(s) for s in dataset.strata]
    threads = config.n_threads

    theta = initial_theta(dataset)
    trajectory = [theta]
    flags: List[str] = []
    loglik: Optional[List[float]] = [] if config.track_loglik else None
    converged = False
    infeasible_run = 0
    logger.info(f"MCEM start: S={dataset.n_strata}, kind={kind.value}, theta0={theta.to_dict()}")

    for iteration in range(1, config.max_iter + 1):
        G = config.G_for(iteration)
        _, moments = estep_all(stats, theta, kind, G, config.L_ref, rng.spawn(iteration), threads)
        inp = MStepInput.from_moments(moments, kind)
        theta_new, report = maximize(inp, previous=theta)
        if report.flags:
            flags.extend(f"iteration {iteration}: {f}" for f in report.flags)
            infeasible_run += 1
            if infeasible_run >= config.max_infeasible:
                raise ConvergenceError(f"M-step infeasible for {infeasible_run} consecutive iterations")
        else:
            infeasible_run = 0
        if q_value(theta_new, inp) < q_value(theta, inp) - 1e-8 * abs(q_value(theta, inp)):
            logger.warning(f"iteration {iteration}: M-step did not increase Q")

        theta = theta_new
        trajectory.append(theta)
        if loglik is not None:
            try:
                loglik.append(marginal_loglik(dataset, theta, config.enumeration_cap))
            except EnumerationGuardError as e:
                logger.info(f"log-likelihood tracking disabled: {e}")
                loglik = None
        logger.debug(
            f"iteration {iteration}: G={G}, theta={np.round(theta.as_array(), 6).tolist()}, "
            f"min ESS={min(m.ess for m in moments):.1f}"
        )

        change = stopping_change(trajectory, config.window, config.stop_relative)
        if change < config.tolerance and G == config.G_schedule[-1]:
            converged = True
            break

    theta_hat = Theta.from_array(_window_mean(trajectory, config.window))
    if converged:
        logger.info(f"MCEM converged after {iteration} iterations: {theta_hat.to_dict()}")
    else:
        logger.warning(f"MCEM stopped at max_iter={config.max_iter} without meeting the stopping rule")
        flags.append("max_iter reached")

    samples, moments = estep_all(stats, theta_hat, kind, config.G_final, config.L_ref, rng.spawn(0), threads)
    score = score_from_moments(theta_hat, moments, kind)
    fisher = fisher_information(stats, theta_hat, samples, kind)
    covariance = None
    try:
        covariance = covariance_from_fisher(fisher)
    except NotPositiveDefiniteError as e:
        logger.warning(str(e))
        flags.append("information matrix not positive definite")
    if dataset.n_strata == 1:
        flags.append("single stratum: covariance unreliable")
    logger.debug(f"score at estimate {score.tolist()}, norm {np.linalg.norm(score):.3e}")

    diagnostics = [
        StratumDiagnostics(s.id, m.ess, m.truncation_mass, m.e_n_plus)
        for s, m in zip(dataset.strata, moments)
    ]
    return FitResult(
        kind=kind,
        theta_hat=theta_hat,
        iterations=iteration,
        converged=converged,
        trajectory=trajectory,
        score=score,
        fisher=fisher,
        covariance=covariance,
        predictors=predict_random_effects(dataset, theta_hat, samples, kind),
        diagnostics=diagnostics,
        config=config,
        flags=flags,
        loglik_trajectory=loglik,
    )
