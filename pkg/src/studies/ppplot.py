"""PP-plot data checking the gamma law of the random effects"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from src.core.exceptions import DomainError
from src.core.inference import gamma_moment_match, per_stratum_estimates
from src.core.model import Dataset, Kind

logger = logging.getLogger(__name__)

MIN_USABLE_STRATA = 3
ZERO_FLAG = 0.75


@dataclass(frozen=True, eq=False)
class PpPlotResult:
    estimates: pd.DataFrame
    pairs: pd.DataFrame


def _pp_pairs(values: np.ndarray, parameter: str) -> pd.DataFrame:
    shape, rate = gamma_moment_match(values)
    x = np.sort(values)
    n = x.size
    return pd.DataFrame({
        "parameter": parameter,
        "value": x,
        "empirical": (np.arange(1, n + 1) - 0.5) / n,
        "fitted": stats.gamma.cdf(x, shape, scale=1.0 / rate),
    })


def ppplot_data(dataset: Dataset) -> PpPlotResult:
    """Per-stratum moment estimates of μ_s and ρ_s and the (empirical, fitted
    gamma) probability pairs for each.

    Strata without an estimate (fewer than two non-zero records) are excluded;
    strata with at least 75% zeros are flagged.
    """
    if dataset.kind is not Kind.CONTINUOUS:
        raise DomainError("pp-plot data is defined for continuous datasets only")
    rows = []
    for e in per_stratum_estimates(dataset):
        rows.append({
            "stratum": e.stratum,
            "n": e.n,
            "n_nonzero": e.n_nonzero,
            "zero_fraction": e.zero_fraction,
            "mu_hat": e.mu,
            "rho_hat": e.mark,
            "usable": e.mu is not None,
            "mostly_zero": e.zero_fraction >= ZERO_FLAG,
        })
    estimates = pd.DataFrame(rows)
    usable = estimates[estimates["usable"]]
    excluded = len(estimates) - len(usable)
    if excluded:
        logger.info(f"{excluded} stratum/strata excluded from the pp-plot (fewer than 2 non-zero records)")
    if len(usable) < MIN_USABLE_STRATA:
        raise DomainError(f"pp-plot needs at least {MIN_USABLE_STRATA} usable strata, got {len(usable)}")
    pairs = pd.concat([
        _pp_pairs(usable["mu_hat"].to_numpy(float), "mu"),
        _pp_pairs(usable["rho_hat"].to_numpy(float), "rho"),
    ], ignore_index=True)
    return PpPlotResult(estimates, pairs)
