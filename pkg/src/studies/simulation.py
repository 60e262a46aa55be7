"""Simulate-then-fit replicates shared by the bias and coverage studies"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from src.core.exceptions import ZicpError
from src.core.inference import mcem_fit
from src.core.model import Dataset, LatentTruth, simulate_hierarchy, uniform_design
from src.core.schemas import StudyGrid
from src.core.specfun import RngStream

from .pool import run_replicates

logger = logging.getLogger(__name__)


def replicate_stream(seed: int, cell: int, replicate: int) -> RngStream:
    """Stream keyed by (seed, cell, replicate); sub-stream 0 simulates, 1 fits"""
    return RngStream(seed, stream_id=cell, path=(replicate,))


def simulate_replicate(grid: StudyGrid, cell: int, S: int, M: int, replicate: int) -> Tuple[Dataset, LatentTruth]:
    stream = replicate_stream(grid.seed, cell, replicate)
    design = uniform_design(S, M, grid.effort)
    return simulate_hierarchy(grid.theta, design, grid.kind, stream.spawn(0))


@dataclass(frozen=True)
class ReplicateTask:
    grid: StudyGrid
    cell: int
    S: int
    M: int
    replicate: int
    levels: Tuple[float, ...] = ()


@dataclass
class ReplicateOutcome:
    cell: int
    S: int
    M: int
    replicate: int
    theta_hat: Optional[Tuple[float, float, float, float]] = None
    converged: bool = False
    has_covariance: bool = False
    covariance: Optional[List[List[float]]] = None
    # level -> ellipsoid membership of the true θ
    ellipsoid: Dict[float, bool] = field(default_factory=dict)
    # level -> per-component interval membership
    intervals: Dict[float, Dict[str, bool]] = field(default_factory=dict)
    error: Optional[str] = None


def fit_replicate(task: ReplicateTask) -> ReplicateOutcome:
    """Simulate one dataset, fit it and test the confidence regions against the truth"""
    grid = task.grid
    outcome = ReplicateOutcome(task.cell, task.S, task.M, task.replicate)
    dataset, _ = simulate_replicate(grid, task.cell, task.S, task.M, task.replicate)
    config = grid.mcem.model_copy(update={"kind": grid.kind, "threads": 1})
    stream = replicate_stream(grid.seed, task.cell, task.replicate)
    try:
        result = mcem_fit(dataset, config, rng=stream.spawn(1))
    except ZicpError as e:
        logger.debug(f"cell {task.cell} replicate {task.replicate} failed: {e}")
        outcome.error = f"{type(e).__name__}: {e}"
        return outcome
    outcome.theta_hat = tuple(result.theta_hat.as_array().tolist())
    outcome.converged = result.converged
    outcome.has_covariance = result.covariance is not None
    if outcome.has_covariance:
        outcome.covariance = result.covariance.tolist()
        for level in task.levels:
            region = result.confidence_region(level)
            outcome.ellipsoid[level] = region.contains(grid.theta)
            outcome.intervals[level] = region.covers(grid.theta)
    return outcome


def run_grid(grid: StudyGrid, levels: Tuple[float, ...] = (), processes: Optional[int] = None,
             progress: bool = True) -> List[ReplicateOutcome]:
    """Every replicate of every cell, in (cell, replicate) order"""
    levels = tuple(levels) or (grid.level,)
    tasks = [
        ReplicateTask(grid, cell, S, M, r, levels)
        for cell, S, M in grid.cells()
        for r in range(grid.replicates)
    ]
    logger.info(f"study grid: {len(grid.cells())} cell(s) x {grid.replicates} replicate(s)")
    return run_replicates(fit_replicate, tasks, processes, desc="fits", progress=progress)
