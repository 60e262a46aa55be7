"""Simulation-based intervals and the calibration of the asymptotic ellipsoid"""

import logging
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats

from src.core.exceptions import DomainError
from src.core.inference import COMPONENTS, covariance_from_fisher
from src.core.model import Theta
from src.core.schemas import McemConfig, StudyGrid

from .simulation import run_grid

logger = logging.getLogger(__name__)


def simulation_intervals(estimates: np.ndarray, level: float) -> pd.DataFrame:
    """Percentile intervals of simulated estimates, one row per component"""
    estimates = np.asarray(estimates, dtype=float).reshape(-1, 4)
    if len(estimates) == 0:
        raise DomainError("no estimates to build intervals from")
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    lo, hi = np.quantile(estimates, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0)
    return pd.DataFrame({"component": COMPONENTS, "lower": lo, "upper": hi})


def calibrate_ellipsoid_level(estimates: np.ndarray, theta_center: Theta, covariance: np.ndarray,
                              target: float) -> float:
    """Asymptotic level whose χ²₄ ellipsoid around `theta_center` holds a
    `target` fraction of the simulated estimates"""
    estimates = np.asarray(estimates, dtype=float).reshape(-1, 4)
    if len(estimates) == 0:
        raise DomainError("no estimates to calibrate on")
    precision = covariance_from_fisher(np.asarray(covariance, dtype=float))
    delta = estimates - theta_center.as_array()
    distances = np.einsum("ri,ij,rj->r", delta, precision, delta)
    return float(stats.chi2.cdf(np.quantile(distances, target), 4))


def calibration_run(theta: Theta, S: int, M: int, replicates: int, mcem: McemConfig, seed: int,
                    target: float = 0.90, covariance: Optional[np.ndarray] = None,
                    processes: Optional[int] = None) -> dict:
    """Fit `replicates` datasets simulated at θ and calibrate the ellipsoid.

    Without an explicit covariance the mean of the replicate covariances is used.
    """
    grid = StudyGrid(S_values=[S], M_values=[M], replicates=replicates, theta_true=tuple(theta.as_array()),
                     seed=seed, kind=mcem.kind, mcem=mcem, level=target)
    outcomes = run_grid(grid, levels=(target,), processes=processes)
    usable = [o for o in outcomes if o.converged]
    if not usable:
        raise DomainError("no replicate converged; nothing to calibrate")
    estimates = np.array([o.theta_hat for o in usable])
    if covariance is None:
        covariances = [np.array(o.covariance) for o in usable if o.covariance is not None]
        if not covariances:
            raise DomainError("no replicate produced a covariance matrix")
        covariance = np.mean(covariances, axis=0)
        logger.info(f"using the mean asymptotic covariance of {len(covariances)} replicate fit(s)")
    level = calibrate_ellipsoid_level(estimates, theta, covariance, target)
    return {
        "theta": theta.to_dict(),
        "S": S,
        "M": M,
        "replicates": replicates,
        "n_converged": len(usable),
        "target": target,
        "asymptotic_level": level,
        "simulation_intervals": simulation_intervals(estimates, target).to_dict(orient="records"),
    }
