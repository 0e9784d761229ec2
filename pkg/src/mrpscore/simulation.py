"""Synthetic finite populations and constrained samples.

The data-generating process: independent normal covariates drive both a
binary outcome and the probability of sample inclusion through logistic
links, and each covariate is discretized into equal-width groups that
later define the poststratification cells.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from .errors import DegenerateCovariate, InfeasibleConstraint
from .seeds import substream

__all__ = [
    "SamplingConstraint",
    "SimConfig",
    "Population",
    "SampleCounts",
    "generate_population",
    "discretize",
    "draw_sample",
    "write_population_csv",
]


class SamplingConstraint(str, Enum):
    ALL_CELLS_OBSERVED = "AllCellsObserved"
    ALL_LEVELS_OBSERVED = "AllLevelsObserved"
    UNCONSTRAINED = "Unconstrained"


@dataclass(frozen=True)
class SimConfig:
    """Configuration of one simulated population-and-sample draw."""

    population_size: int = 20_000
    sample_size: int = 1_000
    num_covariates: int = 4
    covariate_sd: float = 2.0
    levels_per_covariate: int = 5
    outcome_coefs: tuple = (0.1, 1.0, 0.1, 1.0)
    inclusion_coefs: tuple = (0.1, 0.1, 1.0, 1.0)
    sampling_constraint: SamplingConstraint = SamplingConstraint.ALL_CELLS_OBSERVED
    seed: int = 0

    def __post_init__(self):
        if self.population_size <= 0 or self.sample_size <= 0:
            raise ValueError("population_size and sample_size must be positive")
        if self.sample_size > self.population_size:
            raise ValueError("sample_size cannot exceed population_size")
        if self.num_covariates <= 0:
            raise ValueError("num_covariates must be positive")
        if self.covariate_sd <= 0:
            raise ValueError("covariate_sd must be positive")
        if self.levels_per_covariate < 2:
            raise ValueError("levels_per_covariate must be at least 2")
        if len(self.outcome_coefs) != self.num_covariates:
            raise ValueError("outcome_coefs must have one entry per covariate")
        if len(self.inclusion_coefs) != self.num_covariates:
            raise ValueError("inclusion_coefs must have one entry per covariate")
        object.__setattr__(self, "sampling_constraint", SamplingConstraint(self.sampling_constraint))
        object.__setattr__(self, "outcome_coefs", tuple(float(c) for c in self.outcome_coefs))
        object.__setattr__(self, "inclusion_coefs", tuple(float(c) for c in self.inclusion_coefs))


@dataclass
class Population:
    """A finite population with covariates, outcomes and inclusion probabilities.

    ``cell_levels`` enumerates the nonempty covariate-level combinations in
    lexicographic order; ``cell_of`` maps each individual to its row in that
    enumeration. All later cell-indexed structures share this ordering.
    """

    x: np.ndarray            # (N, k) raw covariate values
    levels: np.ndarray       # (N, k) level index per covariate
    outcome_prob: np.ndarray  # (N,)
    y: np.ndarray            # (N,) binary outcomes
    pi: np.ndarray           # (N,) inclusion probabilities
    bin_edges: np.ndarray    # (k, levels + 1)
    cell_levels: np.ndarray = field(default=None)  # (J, k) nonempty cells, lexicographic
    cell_of: np.ndarray = field(default=None)      # (N,) cell index per individual

    def __post_init__(self):
        if self.cell_levels is None:
            self.cell_levels, self.cell_of = np.unique(self.levels, axis=0, return_inverse=True)
            self.cell_of = self.cell_of.ravel()

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cell_levels.shape[0]


@dataclass
class SampleCounts:
    """Per-cell sample counts plus the underlying sampled individuals."""

    indices: np.ndarray  # (n,) population row indices of sampled individuals
    n_j: np.ndarray      # (J,) observations per population cell
    y_j: np.ndarray      # (J,) positive outcomes per population cell

    @property
    def size(self) -> int:
        return self.indices.shape[0]


def discretize(values, levels: int):
    """Split ``values`` into ``levels`` equal-width bins over [min, max].

    Returns (level indices, bin edges). Values landing exactly on an interior
    edge go to the lower bin; the global maximum goes to the top bin. This
    tie rule is a convention, not forced by anything upstream.
    """
    values = np.asarray(values, dtype=float)
    if levels < 2:
        raise ValueError("levels must be at least 2")
    lo, hi = values.min(), values.max()
    if hi <= lo:
        raise DegenerateCovariate("covariate has zero range")
    edges = np.linspace(lo, hi, levels + 1)
    idx = np.searchsorted(edges, values, side="left") - 1
    return np.clip(idx, 0, levels - 1).astype(np.int64), edges


def generate_population(config: SimConfig) -> Population:
    """Draw a population under the logistic outcome/inclusion design.

    Covariates are iid normal(0, covariate_sd); Pr(y=1) and pi are
    inverse-logit linear predictors with the configured coefficients.
    Deterministic given ``config.seed``.
    """
    n, k = config.population_size, config.num_covariates
    rng_x = substream(config.seed, "covariates")
    rng_y = substream(config.seed, "outcomes")

    x = rng_x.normal(0.0, config.covariate_sd, size=(n, k))
    outcome_prob = expit(x @ np.asarray(config.outcome_coefs))
    pi = expit(x @ np.asarray(config.inclusion_coefs))
    y = (rng_y.random(n) < outcome_prob).astype(np.int8)

    levels = np.empty((n, k), dtype=np.int64)
    edges = np.empty((k, config.levels_per_covariate + 1))
    for kk in range(k):
        levels[:, kk], edges[kk] = discretize(x[:, kk], config.levels_per_covariate)

    return Population(x=x, levels=levels, outcome_prob=outcome_prob, y=y, pi=pi, bin_edges=edges)


def _weighted_sample_without_replacement(weights, size, rng):
    # Gumbel-top-k keys: equivalent in distribution to drawing sequentially
    # with probability proportional to the remaining weights.
    if size == 0:
        return np.empty(0, dtype=np.int64)
    gumbel = -np.log(-np.log(rng.random(weights.shape[0])))
    with np.errstate(divide="ignore"):
        keys = np.where(weights > 0, np.log(weights) + gumbel, -np.inf)
    return np.argpartition(-keys, size - 1)[:size]


def _seed_one_per_cell(pop: Population, rng) -> np.ndarray:
    chosen = np.empty(pop.num_cells, dtype=np.int64)
    order = np.argsort(pop.cell_of, kind="stable")
    bounds = np.searchsorted(pop.cell_of[order], np.arange(pop.num_cells + 1))
    for j in range(pop.num_cells):
        members = order[bounds[j]:bounds[j + 1]]
        chosen[j] = members[rng.integers(members.shape[0])]
    return chosen


def _seed_one_per_level(pop: Population, levels_per_covariate: int, rng) -> np.ndarray:
    k = pop.levels.shape[1]
    covered = np.zeros((k, levels_per_covariate), dtype=bool)
    chosen = []
    for kk in range(k):
        for lv in range(levels_per_covariate):
            if covered[kk, lv]:
                continue
            members = np.nonzero(pop.levels[:, kk] == lv)[0]
            if members.shape[0] == 0:
                raise InfeasibleConstraint(f"no individual has level {lv} of covariate {kk + 1}")
            pick = members[rng.integers(members.shape[0])]
            chosen.append(pick)
            covered[np.arange(k), pop.levels[pick]] = True
    return np.unique(np.asarray(chosen, dtype=np.int64))


def draw_sample(pop: Population, config: SimConfig) -> SampleCounts:
    """Draw a size-n sample honoring the configured constraint.

    AllCellsObserved seeds one individual per nonempty cell, AllLevelsObserved
    one per level of each covariate; seeded individuals count toward n and the
    remainder is filled by pi-weighted sampling without replacement.
    """
    rng = substream(config.seed, "sampling")
    n = config.sample_size
    constraint = config.sampling_constraint

    if constraint is SamplingConstraint.ALL_CELLS_OBSERVED:
        seeded = _seed_one_per_cell(pop, rng)
    elif constraint is SamplingConstraint.ALL_LEVELS_OBSERVED:
        seeded = _seed_one_per_level(pop, config.levels_per_covariate, rng)
    else:
        seeded = np.empty(0, dtype=np.int64)

    if seeded.shape[0] > n:
        raise InfeasibleConstraint(
            f"constraint seeds {seeded.shape[0]} individuals but sample size is {n}"
        )

    weights = pop.pi.copy()
    weights[seeded] = 0.0
    fill = _weighted_sample_without_replacement(weights, n - seeded.shape[0], rng)
    indices = np.concatenate([seeded, fill])

    n_j = np.bincount(pop.cell_of[indices], minlength=pop.num_cells)
    y_j = np.bincount(pop.cell_of[indices], weights=pop.y[indices], minlength=pop.num_cells)
    return SampleCounts(indices=np.sort(indices), n_j=n_j, y_j=y_j.astype(np.int64))


def write_population_csv(path, pop: Population, sample: SampleCounts | None = None) -> None:
    """Write one row per individual: id, covariates, levels, probabilities, flags."""
    k = pop.x.shape[1]
    sampled = np.zeros(pop.size, dtype=int)
    if sample is not None:
        sampled[sample.indices] = 1
    header = (
        ["id"]
        + [f"x{i + 1}" for i in range(k)]
        + [f"level{i + 1}" for i in range(k)]
        + ["p_outcome", "y", "pi", "sampled"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(pop.size):
            writer.writerow(
                [i]
                + [repr(v) for v in pop.x[i]]
                + list(pop.levels[i])
                + [repr(float(pop.outcome_prob[i])), int(pop.y[i]), repr(float(pop.pi[i])), sampled[i]]
            )
