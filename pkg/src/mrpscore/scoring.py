"""Squared error and CRPS for poststratified estimates.

Two families, each in three shapes: the direct score of the aggregate, the
cellwise decomposition (weighted cell sums inside the square / absolute
value, which reproduces the direct score exactly), and the conventional
weighted mean of per-cell scores kept as a baseline.

Sign conventions follow the draw-based CRPS estimator
``mean_b( 0.5|phi_b - phi'_b| - |phi_b - truth| )``: CRPS is nonpositive
and closer to zero is better, while squared errors are nonnegative and
smaller is better.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import UnobservedCell
from .mrp import EstimateDraws
from .poststrat import PostStratTable

__all__ = [
    "Permutation",
    "ScoreFamily",
    "ScoreRecord",
    "se_direct",
    "se_cellwise",
    "mean_cell_se",
    "crps_draws",
    "crps_cellwise",
    "mean_cell_crps",
    "sample_proxy_truths",
]


@dataclass(frozen=True)
class Permutation:
    """A shared permutation of draw indices, reused across every cell of a
    scoring call so that decomposition identities hold exactly."""

    idx: np.ndarray
    seed: int = -1

    @classmethod
    def draw(cls, num_draws: int, seed: int) -> "Permutation":
        rng = np.random.Generator(np.random.PCG64(seed))
        idx = rng.permutation(num_draws)
        while num_draws > 1 and np.array_equal(idx, np.arange(num_draws)):
            idx = rng.permutation(num_draws)
        return cls(idx=idx, seed=seed)

    def __len__(self):
        return self.idx.shape[0]

    def apply(self, draws: np.ndarray) -> np.ndarray:
        """Permute along the draw axis (axis 0)."""
        return draws[self.idx]


class ScoreFamily(str, Enum):
    SE = "SE"
    CRPS = "CRPS"


@dataclass
class ScoreRecord:
    """One scored quantity, ready to append to a results CSV."""

    family: str
    variant: str
    target_kind: str
    target_variable: str
    target_level: str
    value: float
    model: str = ""
    rep: int = 0
    seed: int = 0
    khat_max: float = float("nan")
    flagged: bool = False

    CSV_COLUMNS = ("rep", "model", "family", "variant", "target_kind",
                   "target_variable", "target_level", "value", "khat_max",
                   "flagged", "seed")

    def row(self) -> list:
        return [self.rep, self.model, self.family, self.variant, self.target_kind,
                self.target_variable, self.target_level, repr(float(self.value)),
                "" if np.isnan(self.khat_max) else repr(float(self.khat_max)),
                int(self.flagged), self.seed]


def _as_draws(est) -> np.ndarray:
    if isinstance(est, EstimateDraws):
        return est.draws
    return np.asarray(est, dtype=float)


def se_direct(est, truth: float) -> float:
    """Squared error of the posterior-mean estimate against ``truth``."""
    return float((np.mean(_as_draws(est)) - truth) ** 2)


def _check_lengths(*arrays):
    lengths = {np.asarray(a).shape[-1] for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"cellwise inputs disagree in length: {sorted(lengths)}")


def se_cellwise(cell_means, cell_truths, weights) -> float:
    """Squared error with the weighted cell sum inside the square:
    ``(sum_j N_j (est_j - truth_j) / sum_j N_j)^2``."""
    cell_means = np.asarray(cell_means, dtype=float)
    cell_truths = np.asarray(cell_truths, dtype=float)
    weights = np.asarray(weights, dtype=float)
    _check_lengths(cell_means, cell_truths, weights)
    return float((weights @ (cell_means - cell_truths) / weights.sum()) ** 2)


def mean_cell_se(cell_means, cell_truths, weights) -> float:
    """Population-weighted mean of per-cell squared errors (the conventional
    aggregation the cellwise form replaces)."""
    cell_means = np.asarray(cell_means, dtype=float)
    cell_truths = np.asarray(cell_truths, dtype=float)
    weights = np.asarray(weights, dtype=float)
    _check_lengths(cell_means, cell_truths, weights)
    return float(weights @ (cell_means - cell_truths) ** 2 / weights.sum())


def crps_draws(est, truth: float, perm: Permutation) -> float:
    """Draw-based CRPS of an estimate distribution against a scalar truth."""
    draws = _as_draws(est)
    if draws.shape[0] < 2:
        raise ValueError("CRPS needs at least two draws")
    paired = draws[perm.idx]
    return float(np.mean(0.5 * np.abs(draws - paired) - np.abs(draws - truth)))


def crps_cellwise(cell_draws, cell_truths, weights, perm: Permutation) -> float:
    """Cellwise-decomposed CRPS: weighted cell sums are formed inside each
    absolute value, per draw, then averaged over draws.

    With population cell truths and the same permutation this equals
    ``crps_draws`` of the aggregated estimate exactly.
    """
    cell_draws = np.asarray(cell_draws, dtype=float)
    cell_truths = np.asarray(cell_truths, dtype=float)
    weights = np.asarray(weights, dtype=float)
    _check_lengths(cell_draws, cell_truths, weights)
    wsum = weights.sum()
    pair_gap = (cell_draws - cell_draws[perm.idx]) @ weights / wsum
    truth_gap = (cell_draws - cell_truths) @ weights / wsum
    return float(np.mean(0.5 * np.abs(pair_gap) - np.abs(truth_gap)))


def mean_cell_crps(cell_draws, cell_truths, weights, perm: Permutation) -> float:
    """Population-weighted mean of per-cell CRPS values (absolute values
    inside the cell sum), sharing one permutation across cells."""
    cell_draws = np.asarray(cell_draws, dtype=float)
    cell_truths = np.asarray(cell_truths, dtype=float)
    weights = np.asarray(weights, dtype=float)
    _check_lengths(cell_draws, cell_truths, weights)
    per_cell = np.mean(0.5 * np.abs(cell_draws - cell_draws[perm.idx])
                       - np.abs(cell_draws - cell_truths), axis=0)
    return float(weights @ per_cell / weights.sum())


def sample_proxy_truths(table: PostStratTable, cells=None) -> np.ndarray:
    """Cellwise sample estimates y_j / n_j standing in for population truth.

    Raises :class:`UnobservedCell` listing any requested cell with n_j = 0.
    """
    ids = np.arange(table.num_cells) if cells is None else np.asarray(cells, dtype=np.int64)
    missing = ids[table.n_j[ids] == 0]
    if missing.size:
        raise UnobservedCell(missing.tolist())
    return table.y_j[ids] / table.n_j[ids]
