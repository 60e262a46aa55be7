"""Closed-form and Newton M-step updates of θ = (a, b, c, d)"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .estep import StratumMoments
from .exceptions import ConvergenceError, DomainError, MStepInfeasibleError
from .model import Kind, Theta
from .specfun import digamma, log_beta, log_gamma, trigamma

logger = logging.getLogger(__name__)

GAMMA_TOL = 1e-12
BETA_TOL = 1e-12
MAX_SHAPE = 1e8
MAX_ITER = 200


@dataclass(frozen=True)
class MStepInput:
    """Stratum-averaged conditional moments.

    For continuous fits `mark_1`, `mark_2` are the averages of E[ρ] and E[ln ρ];
    for discrete fits they are the averages of E[ln p] and E[ln(1 - p)].
    """
    S: int
    e_mu: float
    e_ln_mu: float
    mark_1: float
    mark_2: float
    kind: Kind = Kind.CONTINUOUS

    @classmethod
    def from_moments(cls, moments: Sequence[StratumMoments], kind) -> "MStepInput":
        kind = Kind.parse(kind)
        if not moments:
            raise DomainError("M-step needs at least one stratum")
        if kind is Kind.CONTINUOUS:
            m1 = [m.e_rho for m in moments]
            m2 = [m.e_ln_rho for m in moments]
        else:
            m1 = [m.e_ln_p for m in moments]
            m2 = [m.e_ln_1mp for m in moments]
        return cls(
            S=len(moments),
            e_mu=math.fsum(m.e_mu for m in moments) / len(moments),
            e_ln_mu=math.fsum(m.e_ln_mu for m in moments) / len(moments),
            mark_1=math.fsum(m1) / len(moments),
            mark_2=math.fsum(m2) / len(moments),
            kind=kind,
        )


def _gamma_residual(a: float, C: float) -> float:
    return math.log(a) - digamma(a) - C


def solve_gamma_shape(C: float, tol: float = GAMMA_TOL, max_iter: int = MAX_ITER) -> Tuple[float, int]:
    """Root of ln a − ψ(a) = C; returns the shape and the iteration count.

    Newton from a₀ = 1 / (2C), falling back to bisection whenever a step leaves
    the current bracket.
    """
    if not C > 0:
        raise MStepInfeasibleError(f"gamma M-step needs C > 0, got {C}")
    x = 1.0 / (2.0 * C)
    lo, hi = x, x
    while _gamma_residual(lo, C) < 0:
        lo /= 2.0
    while _gamma_residual(hi, C) > 0:
        hi *= 2.0
        if hi > 2.0 * MAX_SHAPE:
            raise MStepInfeasibleError(f"gamma shape exceeds {MAX_SHAPE:.0e} (C={C:.3e})")

    for iteration in range(1, max_iter + 1):
        r = _gamma_residual(x, C)
        if abs(r) <= tol:
            break
        if r > 0:
            lo = x
        else:
            hi = x
        step = x - r / (1.0 / x - trigamma(x))
        x = step if lo < step < hi else math.sqrt(lo * hi)
    else:
        raise ConvergenceError(f"gamma shape solver did not converge in {max_iter} iterations (C={C:.3e})")
    if x > MAX_SHAPE:
        raise MStepInfeasibleError(f"gamma shape {x:.3e} exceeds {MAX_SHAPE:.0e}")
    return x, iteration


def solve_gamma_pair(mean_e: float, mean_e_ln: float) -> Tuple[float, float, int]:
    """(shape, rate) maximising Σ_s [a ln b − ln Γ(a) + (a − 1) E ln x_s − b E x_s]"""
    if not mean_e > 0:
        raise MStepInfeasibleError(f"gamma M-step needs a positive mean, got {mean_e}")
    shape, iterations = solve_gamma_shape(math.log(mean_e) - mean_e_ln)
    return shape, shape / mean_e, iterations


def _beta_objective(c: float, d: float, L1: float, L2: float) -> float:
    return -(-log_beta(c, d) + (c - 1.0) * L1 + (d - 1.0) * L2)


def solve_beta_pair(L1: float, L2: float, tol: float = BETA_TOL, max_iter: int = MAX_ITER) -> Tuple[float, float, int]:
    """(c, d) maximising ln Γ(c + d) − ln Γ(c) − ln Γ(d) + (c − 1) L1 + (d − 1) L2.

    The negated objective is strictly convex; damped Newton with step halving
    keeps the iterate positive and monotonically improving.
    """
    if not (L1 < 0 and L2 < 0) or math.exp(L1) + math.exp(L2) >= 1.0:
        raise MStepInfeasibleError(f"beta M-step infeasible for E ln p={L1}, E ln(1-p)={L2}")
    c = 5.0 * math.exp(L1)
    d = 5.0 * (1.0 - math.exp(L1))
    value = _beta_objective(c, d, L1, L2)
    for iteration in range(1, max_iter + 1):
        psi_cd = digamma(c + d)
        grad = np.array([-(psi_cd - digamma(c) + L1), -(psi_cd - digamma(d) + L2)])
        if np.max(np.abs(grad)) <= tol:
            break
        tri_cd = trigamma(c + d)
        hess = np.array([[trigamma(c) - tri_cd, -tri_cd], [-tri_cd, trigamma(d) - tri_cd]])
        step = np.linalg.solve(hess, grad)
        scale = 1.0
        while True:
            c_new, d_new = c - scale * step[0], d - scale * step[1]
            if c_new > 0 and d_new > 0:
                new_value = _beta_objective(c_new, d_new, L1, L2)
                if new_value <= value + 1e-14 * abs(value):
                    break
            scale /= 2.0
            if scale < 1e-12:
                raise ConvergenceError("beta M-step line search stalled")
        c, d, value = c_new, d_new, new_value
        if max(c, d) > MAX_SHAPE:
            raise MStepInfeasibleError(f"beta parameters diverged (c={c:.3e}, d={d:.3e})")
    else:
        raise ConvergenceError(f"beta M-step did not converge in {max_iter} iterations")
    return c, d, iteration


def q_value(theta: Theta, inp: MStepInput) -> float:
    """Expected complete-data log-likelihood at θ, up to θ-free constants"""
    t = theta
    q_mu = t.a * math.log(t.b) - log_gamma(t.a) + (t.a - 1.0) * inp.e_ln_mu - t.b * inp.e_mu
    if inp.kind is Kind.CONTINUOUS:
        q_mark = t.c * math.log(t.d) - log_gamma(t.c) + (t.c - 1.0) * inp.mark_2 - t.d * inp.mark_1
    else:
        q_mark = -log_beta(t.c, t.d) + (t.c - 1.0) * inp.mark_1 + (t.d - 1.0) * inp.mark_2
    return inp.S * (q_mu + q_mark)


@dataclass
class MStepReport:
    flags: List[str] = field(default_factory=list)
    iterations: Dict[str, int] = field(default_factory=dict)


def maximize(inp: MStepInput, previous: Optional[Theta] = None) -> Tuple[Theta, MStepReport]:
    """Full M-step. When one block is infeasible and a previous θ is given, that
    block is carried over and the report is flagged; without a previous θ the
    error propagates."""
    report = MStepReport()
    try:
        a, b, report.iterations["mu"] = solve_gamma_pair(inp.e_mu, inp.e_ln_mu)
    except MStepInfeasibleError as e:
        if previous is None:
            raise
        logger.warning(f"mu block kept at previous value: {e}")
        report.flags.append("mu_block_infeasible")
        a, b = previous.a, previous.b
    try:
        if inp.kind is Kind.CONTINUOUS:
            c, d, report.iterations["mark"] = solve_gamma_pair(inp.mark_1, inp.mark_2)
        else:
            c, d, report.iterations["mark"] = solve_beta_pair(inp.mark_1, inp.mark_2)
    except MStepInfeasibleError as e:
        if previous is None:
            raise
        logger.warning(f"mark block kept at previous value: {e}")
        report.flags.append("mark_block_infeasible")
        c, d = previous.c, previous.d
    return Theta(a, b, c, d), report
