"""Poststratification aggregation of posterior cell-probability draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .poststrat import CellSet, PostStratTable, require_nonempty

__all__ = ["EstimateDraws", "aggregate", "point_estimate"]


@dataclass
class EstimateDraws:
    """Posterior draws of a population or subpopulation estimate."""

    draws: np.ndarray  # (B,)
    target: str
    model: str = ""

    @property
    def num_draws(self) -> int:
        return self.draws.shape[0]


def aggregate(cell_draws: np.ndarray, table: PostStratTable, cells: CellSet,
              model: str = "") -> EstimateDraws:
    """Population-count weighted mean of the member cells, per draw.

    ``cell_draws`` is (B, J) aligned with the table's cell order; each output
    draw is the convex combination sum_s N_s p_s^b / sum_s N_s.
    """
    ids = require_nonempty(table, cells)
    w = table.counts[ids].astype(float)
    draws = cell_draws[:, ids] @ w / w.sum()
    return EstimateDraws(draws=draws, target=cells.descriptor, model=model)


def point_estimate(est: EstimateDraws) -> float:
    """Posterior mean of the estimate draws."""
    return float(np.mean(est.draws))
