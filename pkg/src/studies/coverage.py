"""Empirical coverage of the asymptotic confidence regions"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import pandas as pd

from src.core.inference import COMPONENTS
from src.core.schemas import StudyGrid

from .simulation import ReplicateOutcome, run_grid

logger = logging.getLogger(__name__)


@dataclass
class CoverageCell:
    S: int
    M: int
    level: float
    replicates: int
    n_converged: int
    n_covered: int
    component_covered: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.n_covered <= self.n_converged <= self.replicates:
            raise ValueError(f"inconsistent coverage counts {self}")

    @property
    def coverage(self) -> float:
        return self.n_covered / self.n_converged if self.n_converged else math.nan

    @property
    def std_error(self) -> float:
        """Binomial standard error of `coverage`"""
        if not self.n_converged:
            return math.nan
        p = self.coverage
        return math.sqrt(p * (1.0 - p) / self.n_converged)

    def to_row(self) -> Dict[str, float]:
        row = {
            "S": self.S, "M": self.M, "level": self.level,
            "replicates": self.replicates, "n_converged": self.n_converged, "n_covered": self.n_covered,
            "coverage": self.coverage, "std_error": self.std_error,
        }
        for k in COMPONENTS:
            n = self.component_covered.get(k, 0)
            row[f"coverage_{k}"] = n / self.n_converged if self.n_converged else math.nan
        return row


def coverage_cells(grid: StudyGrid, outcomes: List[ReplicateOutcome], level: Optional[float] = None) -> List[CoverageCell]:
    """Replicates that did not converge or have no covariance are excluded from
    the numerator and the denominator, and counted in `replicates`"""
    level = level or grid.level
    cells = []
    for cell, S, M in grid.cells():
        cell_outcomes = [o for o in outcomes if o.cell == cell]
        usable = [o for o in cell_outcomes if o.converged and o.has_covariance and level in o.ellipsoid]
        components = {k: sum(o.intervals[level][k] for o in usable) for k in COMPONENTS}
        cells.append(CoverageCell(
            S=S, M=M, level=level,
            replicates=len(cell_outcomes),
            n_converged=len(usable),
            n_covered=sum(o.ellipsoid[level] for o in usable),
            component_covered=components,
        ))
    return cells


def coverage_study(grid: StudyGrid, processes: Optional[int] = None,
                   outcomes: Optional[List[ReplicateOutcome]] = None) -> List[CoverageCell]:
    if outcomes is None:
        outcomes = run_grid(grid, levels=(grid.level,), processes=processes)
    cells = coverage_cells(grid, outcomes)
    for c in cells:
        logger.info(f"S={c.S}, M={c.M}: coverage {c.coverage:.3f} ± {c.std_error:.3f} ({c.n_converged} fits)")
    return cells


def coverage_frame(cells: List[CoverageCell]) -> pd.DataFrame:
    return pd.DataFrame([c.to_row() for c in cells])
