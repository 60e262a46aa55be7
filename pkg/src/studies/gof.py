"""Goodness of fit by averaging histograms of datasets simulated at the estimate"""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd

from src.core.model import Dataset, Theta, simulate_hierarchy
from src.core.specfun import RngStream

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GofResult:
    histogram: pd.DataFrame
    zero_envelope: Dict[str, float]


def _bin_counts(y: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Zeros in their own bin, then positive values in (e_k, e_k+1]; values past
    the last edge go into the last bin"""
    positive = y[y > 0]
    idx = np.clip(np.searchsorted(edges, positive, side="left") - 1, 0, len(edges) - 2)
    counts = np.bincount(idx, minlength=len(edges) - 1)
    return np.concatenate([[np.sum(y == 0)], counts])


def gof_histogram(dataset: Dataset, theta_hat: Theta, replicates: int, bins: int, rng: RngStream) -> GofResult:
    if replicates < 1 or bins < 1:
        raise ValueError("replicates and bins must be >= 1")
    observed_y = np.concatenate([s.y for s in dataset.strata])
    top = float(observed_y.max()) if observed_y.max() > 0 else 1.0
    edges = np.linspace(0.0, top, bins + 1)
    observed = _bin_counts(observed_y, edges)

    design = dataset.design()
    ids = [s.id for s in dataset.strata]
    simulated = np.empty((replicates, bins + 1))
    for r in range(replicates):
        sim, _ = simulate_hierarchy(theta_hat, design, dataset.kind, rng.spawn(r), stratum_ids=ids)
        simulated[r] = _bin_counts(np.concatenate([s.y for s in sim.strata]), edges)

    q05, q95 = np.quantile(simulated, [0.05, 0.95], axis=0)
    histogram = pd.DataFrame({
        "lower": np.concatenate([[0.0], edges[:-1]]),
        "upper": np.concatenate([[0.0], edges[1:]]),
        "observed": observed,
        "simulated_mean": simulated.mean(axis=0),
        "simulated_q05": q05,
        "simulated_q95": q95,
    })
    envelope = {
        "observed_zero": float(observed[0]),
        "q05": float(q05[0]),
        "q95": float(q95[0]),
        "inside": bool(q05[0] <= observed[0] <= q95[0]),
    }
    logger.info(f"zero count {observed[0]} vs simulated 90% envelope [{q05[0]:.1f}, {q95[0]:.1f}]")
    return GofResult(histogram, envelope)
