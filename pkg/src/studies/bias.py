"""Relative bias of the MCEM estimator over a grid of designs"""

import logging
from typing import List, Optional

import numpy as np
import pandas as pd

from src.core.inference import COMPONENTS
from src.core.schemas import StudyGrid

from .simulation import ReplicateOutcome, run_grid

logger = logging.getLogger(__name__)


def bias_table(grid: StudyGrid, outcomes: List[ReplicateOutcome]) -> pd.DataFrame:
    """One row per (S, M) cell: mean (θ̂ − θ)/θ and mean ln(θ̂/θ) per component
    over converged replicates"""
    truth = grid.theta.as_array()
    rows = []
    for cell, S, M in grid.cells():
        cell_outcomes = [o for o in outcomes if o.cell == cell]
        estimates = np.array([o.theta_hat for o in cell_outcomes if o.converged], dtype=float).reshape(-1, 4)
        row = {"S": S, "M": M, "replicates": len(cell_outcomes), "n_converged": len(estimates)}
        for i, k in enumerate(COMPONENTS):
            if len(estimates):
                row[f"rel_bias_{k}"] = float(np.mean((estimates[:, i] - truth[i]) / truth[i]))
                row[f"log_bias_{k}"] = float(np.mean(np.log(estimates[:, i] / truth[i])))
            else:
                row[f"rel_bias_{k}"] = row[f"log_bias_{k}"] = np.nan
        if row["n_converged"] < row["replicates"]:
            logger.info(f"cell S={S}, M={M}: {row['replicates'] - row['n_converged']} replicate(s) excluded")
        rows.append(row)
    return pd.DataFrame(rows)


def bias_study(grid: StudyGrid, processes: Optional[int] = None,
               outcomes: Optional[List[ReplicateOutcome]] = None) -> pd.DataFrame:
    if outcomes is None:
        outcomes = run_grid(grid, processes=processes)
    return bias_table(grid, outcomes)
