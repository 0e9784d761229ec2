"""Poststratification table construction and cell-set queries.

A table holds one record per nonempty population cell, ordered
lexicographically by level indices so that posterior draw matrices align
by column everywhere downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import CellMismatch, EmptySet, UnknownLevel
from .simulation import Population, SampleCounts

__all__ = ["PostStratTable", "CellSet", "build_table", "cell_set", "read_table_csv", "write_table_csv"]


@dataclass
class PostStratTable:
    """The J nonempty poststratification cells.

    Cell ids are dense 0..J-1 in lexicographic level order. ``true_prob``
    is the within-cell population mean of the binary outcome; ``n_j`` and
    ``y_j`` are sample counts (zero for unobserved cells).
    """

    levels: np.ndarray     # (J, k) level indices
    counts: np.ndarray     # (J,) population size N_j
    true_prob: np.ndarray  # (J,)
    n_j: np.ndarray        # (J,)
    y_j: np.ndarray        # (J,)
    levels_per_covariate: int = 0

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.true_prob = np.asarray(self.true_prob, dtype=float)
        self.n_j = np.asarray(self.n_j, dtype=np.int64)
        self.y_j = np.asarray(self.y_j, dtype=np.int64)
        if self.levels_per_covariate == 0:
            self.levels_per_covariate = int(self.levels.max()) + 1
        if np.any(self.counts <= 0):
            raise CellMismatch("every table cell must have N_j > 0")
        if np.any(self.n_j > self.counts):
            raise CellMismatch("cell sample size exceeds cell population size")
        if np.any(self.y_j > self.n_j):
            raise CellMismatch("cell successes exceed cell sample size")

    @property
    def num_cells(self) -> int:
        return self.levels.shape[0]

    @property
    def num_covariates(self) -> int:
        return self.levels.shape[1]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def population_truth(self) -> float:
        return float(self.counts @ self.true_prob / self.counts.sum())

    def observed_ids(self) -> np.ndarray:
        return np.nonzero(self.n_j > 0)[0]

    def unobserved_ids(self) -> np.ndarray:
        return np.nonzero(self.n_j == 0)[0]

    def weighted_truth(self, cells: np.ndarray) -> float:
        w = self.counts[cells]
        return float(w @ self.true_prob[cells] / w.sum())

    def without_cell(self, cell_id: int) -> "PostStratTable":
        """Copy of the table with cell ``cell_id``'s sample counts removed."""
        n_j = self.n_j.copy()
        y_j = self.y_j.copy()
        n_j[cell_id] = 0
        y_j[cell_id] = 0
        return PostStratTable(self.levels, self.counts, self.true_prob, n_j, y_j,
                              self.levels_per_covariate)


@dataclass(frozen=True)
class CellSet:
    """A subpopulation: a named descriptor plus its member cell ids."""

    descriptor: str
    ids: np.ndarray = field(compare=False)

    def __len__(self):
        return self.ids.shape[0]


def build_table(pop: Population, sample: SampleCounts) -> PostStratTable:
    """Tabulate the nonempty population cells with truths and sample counts."""
    if sample.n_j.shape[0] != pop.num_cells:
        raise CellMismatch("sample counts do not align with population cells")
    counts = np.bincount(pop.cell_of, minlength=pop.num_cells)
    success = np.bincount(pop.cell_of, weights=pop.y, minlength=pop.num_cells)
    if np.any((sample.n_j > 0) & (counts == 0)):
        raise CellMismatch("sampled cell has zero population count")
    return PostStratTable(
        levels=pop.cell_levels,
        counts=counts,
        true_prob=success / counts,
        n_j=sample.n_j,
        y_j=sample.y_j,
        levels_per_covariate=pop.bin_edges.shape[1] - 1,
    )


def cell_set(table: PostStratTable, descriptor) -> CellSet:
    """Resolve a descriptor to the matching cell ids.

    Accepted descriptors: ``"population"``, ``"observed"``, ``"unobserved"``,
    a ``(variable, level)`` pair with 1-based variable index, or an explicit
    sequence of cell ids.
    """
    if isinstance(descriptor, str):
        if descriptor == "population":
            return CellSet("population", np.arange(table.num_cells))
        if descriptor == "observed":
            return CellSet("observed", table.observed_ids())
        if descriptor == "unobserved":
            return CellSet("unobserved", table.unobserved_ids())
        raise UnknownLevel(f"unknown descriptor {descriptor!r}")
    if isinstance(descriptor, tuple) and len(descriptor) == 2:
        var, level = descriptor
        if not 1 <= var <= table.num_covariates:
            raise UnknownLevel(f"variable {var} out of range")
        if not 0 <= level < table.levels_per_covariate:
            raise UnknownLevel(f"level {level} out of range for variable {var}")
        ids = np.nonzero(table.levels[:, var - 1] == level)[0]
        return CellSet(f"x{var}={level}", ids)
    ids = np.asarray(list(descriptor), dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.num_cells):
        raise UnknownLevel("explicit cell ids out of range")
    return CellSet("explicit", ids)


def require_nonempty(table: PostStratTable, cells: CellSet) -> np.ndarray:
    if len(cells) == 0 or table.counts[cells.ids].sum() <= 0:
        raise EmptySet(f"cell set {cells.descriptor!r} is empty")
    return cells.ids


def write_table_csv(path, table: PostStratTable) -> None:
    k = table.num_covariates
    header = ["j"] + [f"level{i + 1}" for i in range(k)] + ["N_j", "true_prob", "n_j", "y_j"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j in range(table.num_cells):
            writer.writerow(
                [j] + list(table.levels[j])
                + [int(table.counts[j]), repr(float(table.true_prob[j])),
                   int(table.n_j[j]), int(table.y_j[j])]
            )


def read_table_csv(path) -> PostStratTable:
    """Load an externally supplied table written by :func:`write_table_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    k = sum(1 for c in header if c.startswith("level"))
    levels, counts, truth, n_j, y_j = [], [], [], [], []
    for row in rows[1:]:
        levels.append([int(v) for v in row[1:1 + k]])
        counts.append(int(row[1 + k]))
        truth.append(float(row[2 + k]))
        n_j.append(int(row[3 + k]))
        y_j.append(int(row[4 + k]))
    return PostStratTable(np.asarray(levels), np.asarray(counts), np.asarray(truth),
                          np.asarray(n_j), np.asarray(y_j))
