"""Leave-one-cell-out machinery.

Holding out one poststratification cell's binomial count and predicting it
from the rest is done two ways: brute force (refit per held-out cell) and
a Pareto-smoothed importance-sampling approximation built on the full fit.
The importance ratio for cell j treats the whole cell count as the
held-out unit, r_j^b = 1 / BinomialPmf(y_j | n_j, p_j^b). The largest
ratios are replaced by expected order statistics of a generalized Pareto
fitted to the tail, and CRPS-style scores use stratified importance
resampling of the draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroWeights, TailTooSmall, UnobservedCell
from .model import CellProbDraws, McmcConfig, ModelSpec, fit, log_lik_cell
from .poststrat import PostStratTable
from .scoring import Permutation
from .seeds import stream_seed, substream

__all__ = [
    "PsisResult",
    "LocoCellPredictions",
    "gpd_fit_tail",
    "psis_smooth",
    "stratified_resample",
    "raw_ratios",
    "psis_for_model",
    "brute_force_loco",
    "psis_loco_se",
    "psis_loco_crps",
    "level_average_score",
    "KHAT_WARN",
]

KHAT_WARN = 0.7


@dataclass
class PsisResult:
    """Per observed cell: smoothed weights, tail diagnostics and resampled
    draw indices (all aligned with ``cell_ids``)."""

    cell_ids: np.ndarray      # (S,)
    weights: np.ndarray       # (S, B)
    khat: np.ndarray          # (S,)
    tail_size: int
    resample_idx: np.ndarray  # (S, B)

    def column(self, cell_id: int) -> int:
        pos = np.searchsorted(self.cell_ids, cell_id)
        if pos >= self.cell_ids.shape[0] or self.cell_ids[pos] != cell_id:
            raise UnobservedCell([int(cell_id)])
        return int(pos)

    def columns(self, cell_ids) -> np.ndarray:
        cell_ids = np.asarray(cell_ids)
        pos = np.searchsorted(self.cell_ids, cell_ids)
        pos = np.clip(pos, 0, self.cell_ids.shape[0] - 1)
        bad = self.cell_ids[pos] != cell_ids
        if np.any(bad):
            raise UnobservedCell(cell_ids[bad].tolist())
        return pos

    def flagged(self, cell_ids=None) -> bool:
        k = self.khat if cell_ids is None else self.khat[self.columns(cell_ids)]
        return bool(np.any(k > KHAT_WARN))

    def khat_max(self, cell_ids=None) -> float:
        k = self.khat if cell_ids is None else self.khat[self.columns(cell_ids)]
        return float(np.max(k)) if k.size else float("nan")


@dataclass
class LocoCellPredictions:
    """Held-out-cell probability draws, by source."""

    cell_ids: np.ndarray  # (S,)
    probs: np.ndarray     # (B, S); column s is cell_ids[s] predicted without its data
    source: str           # "brute" or "psis"
    converged: np.ndarray = None  # (S,) per-refit flags (brute only)

    def columns(self, cell_ids) -> np.ndarray:
        cell_ids = np.asarray(cell_ids)
        pos = np.searchsorted(self.cell_ids, cell_ids)
        pos = np.clip(pos, 0, self.cell_ids.shape[0] - 1)
        bad = self.cell_ids[pos] != cell_ids
        if np.any(bad):
            raise UnobservedCell(cell_ids[bad].tolist())
        return pos


def gpd_fit_tail(excesses) -> tuple:
    """Estimate generalized Pareto (shape k, scale sigma) from tail excesses.

    Profile posterior-mean estimator over a grid of shape candidates
    (Zhang-Stephens style), with the usual weak prior pulling k toward 0.5.
    """
    x = np.sort(np.asarray(excesses, dtype=float))
    n = x.shape[0]
    if n < 5:
        raise TailTooSmall(f"need at least 5 tail values, got {n}")
    if x[-1] <= 0 or x[-1] - x[0] <= 1e-12 * abs(x[-1]):
        raise TailTooSmall("tail excesses are degenerate")

    prior = 3.0
    m = 30 + int(math.sqrt(n))
    bs = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    bs = bs / (prior * x[int(n / 4 + 0.5) - 1]) + 1.0 / x[-1]

    ks = np.mean(np.log1p(-bs[:, None] * x), axis=1)
    logl = n * (np.log(-bs / ks) - ks - 1.0)
    with np.errstate(over="ignore"):
        w = 1.0 / np.sum(np.exp(logl - logl[:, None]), axis=1)
    b = np.sum(bs * w / w.sum())

    k = np.mean(np.log1p(-b * x))
    sigma = -k / b
    k = k * n / (n + 10.0) + 10.0 * 0.5 / (n + 10.0)
    return float(k), float(sigma)


def _gpd_quantile(q, k, sigma):
    q = np.asarray(q, dtype=float)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-q)
    return sigma / k * (np.expm1(-k * np.log1p(-q)))


def psis_smooth(ratios) -> tuple:
    """Replace the largest importance ratios with fitted GPD order statistics.

    Tail size is ceil(min(0.2 B, 3 sqrt(B))). Weights are capped at the
    maximum raw ratio and keep the raw rank order. Returns (weights, khat);
    khat is -inf when the tail is degenerate (nothing to smooth) and +inf
    when the tail cannot be fit at all (weights then just truncated).
    """
    ratios = np.asarray(ratios, dtype=float)
    b = ratios.shape[0]
    if b < 25:
        raise ValueError("PSIS smoothing needs at least 25 draws")
    tail = int(math.ceil(min(0.2 * b, 3.0 * math.sqrt(b))))
    order = np.argsort(ratios, kind="stable")
    cap = ratios[order[-1]]
    cutoff = ratios[order[-tail - 1]]
    excess = ratios[order[-tail:]] - cutoff

    try:
        k, sigma = gpd_fit_tail(excess)
    except TailTooSmall:
        if np.all(excess <= 1e-12 * max(cap, 1.0)):
            return ratios.copy(), float("-inf")
        return np.minimum(ratios, cap), float("inf")

    probs = (np.arange(1, tail + 1) - 0.5) / tail
    smoothed = cutoff + _gpd_quantile(probs, k, sigma)
    weights = ratios.copy()
    weights[order[-tail:]] = np.minimum(smoothed, cap)
    return weights, float(k)


def stratified_resample(weights, seed_or_rng) -> np.ndarray:
    """Resample draw indices proportional to weights, one uniform per
    equal-probability stratum. Deterministic given the seed."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    total = weights.sum()
    if total <= 0:
        raise AllZeroWeights("resampling weights sum to zero")
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else np.random.Generator(np.random.PCG64(seed_or_rng))
    b = weights.shape[0]
    u = (np.arange(b) + rng.random(b)) / b
    edges = np.cumsum(weights / total)
    edges[-1] = 1.0
    return np.minimum(np.searchsorted(edges, u, side="left"), b - 1).astype(np.int64)


def raw_ratios(draws: CellProbDraws, cell_id: int, n: int, y: int) -> np.ndarray:
    """Leave-cell-out importance ratios 1 / Pr(y_j | n_j, p_j^b), rescaled by
    the largest log ratio so the result is strictly inside (0, 1]."""
    log_ratio = -log_lik_cell(draws, cell_id, n, y)
    return np.exp(log_ratio - log_ratio.max())


def psis_for_model(draws: CellProbDraws, table: PostStratTable, seed: int) -> PsisResult:
    """PSIS weights and resampled draw indices for every observed cell."""
    obs = table.observed_ids()
    b = draws.num_draws
    weights = np.empty((obs.shape[0], b))
    khat = np.empty(obs.shape[0])
    idx = np.empty((obs.shape[0], b), dtype=np.int64)
    tail = int(math.ceil(min(0.2 * b, 3.0 * math.sqrt(b))))
    for s, j in enumerate(obs):
        r = raw_ratios(draws, int(j), int(table.n_j[j]), int(table.y_j[j]))
        weights[s], khat[s] = psis_smooth(r)
        idx[s] = stratified_resample(weights[s], stream_seed(seed, "resample", int(j)))
    return PsisResult(cell_ids=obs, weights=weights, khat=khat, tail_size=tail,
                      resample_idx=idx)


def brute_force_loco(spec: ModelSpec, table: PostStratTable, mcmc: McmcConfig,
                     full_fit: CellProbDraws | None = None,
                     refit_mcmc: McmcConfig | None = None) -> LocoCellPredictions:
    """Refit once per observed cell with that cell's count removed and keep
    the refit's prediction for the held-out cell (J + 1 fits in total,
    counting the full fit used for warm starts)."""
    if full_fit is None:
        full_fit = fit(spec, table, mcmc)
    warm = full_fit.diagnostics.get("step_sizes")
    refit_mcmc = refit_mcmc or mcmc
    obs = table.observed_ids()
    probs = np.empty((refit_mcmc.total_draws, obs.shape[0]))
    converged = np.empty(obs.shape[0], dtype=bool)
    for s, j in enumerate(obs):
        refit = fit(spec, table.without_cell(int(j)),
                    refit_mcmc.with_seed(stream_seed(refit_mcmc.seed, "loco", int(j))),
                    warm_start=warm)
        probs[:, s] = refit.probs[:, int(j)]
        converged[s] = refit.converged
    return LocoCellPredictions(cell_ids=obs, probs=probs, source="brute",
                               converged=converged)


def _reweighted_cell_means(draws: CellProbDraws, psis: PsisResult, cell_ids) -> np.ndarray:
    cols = psis.columns(cell_ids)
    w = psis.weights[cols]
    p = draws.probs[:, np.asarray(cell_ids)].T
    return (w * p).sum(axis=1) / w.sum(axis=1)


def resampled_cell_draws(draws: CellProbDraws, psis: PsisResult, cell_ids) -> np.ndarray:
    """(B, S) matrix of stratified-resampled draws approximating each cell's
    held-out predictive distribution."""
    cols = psis.columns(cell_ids)
    out = np.empty((draws.num_draws, cols.shape[0]))
    for i, (j, c) in enumerate(zip(np.asarray(cell_ids), cols)):
        out[:, i] = draws.probs[psis.resample_idx[c], int(j)]
    return out


def psis_loco_se(draws: CellProbDraws, psis: PsisResult, table: PostStratTable,
                 cell_ids, truths) -> float:
    """PSIS-LOCO squared error: importance-weighted per-cell errors combined
    with the weighted cell sum inside the square."""
    cell_ids = np.asarray(cell_ids)
    truths = np.asarray(truths, dtype=float)
    means = _reweighted_cell_means(draws, psis, cell_ids)
    w = table.counts[cell_ids].astype(float)
    return float((w @ (means - truths) / w.sum()) ** 2)


def psis_loco_crps(draws: CellProbDraws, psis: PsisResult, table: PostStratTable,
                   cell_ids, truths, perm: Permutation) -> float:
    """PSIS-LOCO CRPS from stratified-resampled draws, sharing one
    permutation across cells (applied to the resampled sequences)."""
    cell_ids = np.asarray(cell_ids)
    truths = np.asarray(truths, dtype=float)
    rw = resampled_cell_draws(draws, psis, cell_ids)
    w = table.counts[cell_ids].astype(float)
    wsum = w.sum()
    pair_gap = (rw - rw[perm.idx]) @ w / wsum
    truth_gap = (rw - truths) @ w / wsum
    return float(np.mean(0.5 * np.abs(pair_gap) - np.abs(truth_gap)))


def level_average_score(level_scores) -> float:
    """Mean of one score per level of a variable."""
    scores = np.asarray(level_scores, dtype=float)
    if scores.size == 0 or np.any(np.isnan(scores)):
        raise ValueError("need one score for every level")
    return float(scores.mean())
