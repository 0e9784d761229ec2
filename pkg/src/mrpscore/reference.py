"""Reference-model validation scores.

A trusted reference model stands in for the unknown population truth.
With every cell observed, candidate and reference are compared through
their (LOCO) cell predictions. With unobserved cells, the partial score
compares the two models everywhere (LOCO on observed cells, full-fit
predictions elsewhere), and the combined score uses cross-validation
against the cellwise sample estimates on observed cells and the reference
only where nothing was observed.

CRPS-family comparisons between two models use the draw-based form of the
(negated) squared-CDF distance,

    0.5 E|Xc - Xc'| + 0.5 E|Xr - Xr'| - E|Xc - Xr|,

which is nonpositive with 0 at equality, the same orientation as the CRPS
scores elsewhere. In the combined score the "reference" side of that
distance is a mixture: the cellwise sample estimate (a point mass) on
observed cells and the reference predictive elsewhere, so its self-distance
term keeps only the unobserved-cell contribution and vanishes entirely when
every cell is observed, collapsing the score to plain PSIS-LOCO
cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import kendalltau

from .errors import BadPartition, UnobservedCell
from .loco import (LocoCellPredictions, PsisResult, _reweighted_cell_means,
                   psis_loco_crps, psis_loco_se, resampled_cell_draws)
from .model import CellProbDraws
from .poststrat import CellSet, PostStratTable, require_nonempty
from .scoring import Permutation, sample_proxy_truths

__all__ = ["ReferencePair", "ref_se", "ref_crps", "partial_ref_se",
           "partial_ref_crps", "combined_se", "combined_crps", "reference_check"]


@dataclass
class ReferencePair:
    """A candidate and a reference model fit on the same table."""

    candidate: CellProbDraws
    reference: CellProbDraws
    table: PostStratTable
    candidate_psis: PsisResult | None = None
    reference_psis: PsisResult | None = None
    candidate_loco: LocoCellPredictions | None = None
    reference_loco: LocoCellPredictions | None = None

    def __post_init__(self):
        if self.candidate.num_cells != self.reference.num_cells:
            raise ValueError("candidate and reference cover different cells")
        if self.candidate.num_draws != self.reference.num_draws:
            raise ValueError("candidate and reference draw counts differ")

    def _cell_means(self, which: str, ids: np.ndarray, mode: str) -> np.ndarray:
        draws = self.candidate if which == "candidate" else self.reference
        if mode == "full":
            return draws.probs[:, ids].mean(axis=0)
        if mode == "psis":
            psis = self.candidate_psis if which == "candidate" else self.reference_psis
            if psis is None:
                raise ValueError(f"{which} PSIS result not attached")
            return _reweighted_cell_means(draws, psis, ids)
        if mode == "brute":
            loco = self.candidate_loco if which == "candidate" else self.reference_loco
            if loco is None:
                raise ValueError(f"{which} brute LOCO predictions not attached")
            return loco.probs[:, loco.columns(ids)].mean(axis=0)
        raise ValueError(f"unknown mode {mode!r}")

    def _cell_draws(self, which: str, ids: np.ndarray, mode: str) -> np.ndarray:
        draws = self.candidate if which == "candidate" else self.reference
        if mode == "full":
            return draws.probs[:, ids]
        if mode == "psis":
            psis = self.candidate_psis if which == "candidate" else self.reference_psis
            if psis is None:
                raise ValueError(f"{which} PSIS result not attached")
            return resampled_cell_draws(draws, psis, ids)
        if mode == "brute":
            loco = self.candidate_loco if which == "candidate" else self.reference_loco
            if loco is None:
                raise ValueError(f"{which} brute LOCO predictions not attached")
            return loco.probs[:, loco.columns(ids)]
        raise ValueError(f"unknown mode {mode!r}")


def ref_se(pair: ReferencePair, cells: CellSet, mode: str = "psis") -> float:
    """Squared weighted difference between candidate and reference cell
    estimates; ``mode`` selects full-fit, brute-LOCO or PSIS-LOCO cell
    predictions (both models treated alike)."""
    ids = require_nonempty(pair.table, cells)
    mc = pair._cell_means("candidate", ids, mode)
    mr = pair._cell_means("reference", ids, mode)
    w = pair.table.counts[ids].astype(float)
    return float((w @ (mc - mr) / w.sum()) ** 2)


def _cross_gap(xc_agg: np.ndarray, xr_agg: np.ndarray, perm: Permutation) -> np.ndarray:
    # symmetrized permuted pairing: estimates E|X - Y| without assuming the
    # two models' draw sequences are independent, is exactly symmetric in
    # (candidate, reference), and cancels the self-distance terms exactly
    # when both models share one draw sequence
    return 0.5 * (np.abs(xc_agg - xr_agg[perm.idx]) + np.abs(xc_agg[perm.idx] - xr_agg))


def ref_crps(pair: ReferencePair, cells: CellSet, perm: Permutation,
             mode: str = "psis") -> float:
    """Draw-based distributional distance between the two models' aggregated
    estimates (see module docstring for the sign convention)."""
    ids = require_nonempty(pair.table, cells)
    xc = pair._cell_draws("candidate", ids, mode)
    xr = pair._cell_draws("reference", ids, mode)
    w = pair.table.counts[ids].astype(float)
    wsum = w.sum()
    agg_c = xc @ w / wsum
    agg_r = xr @ w / wsum
    gc = agg_c - agg_c[perm.idx]
    gr = agg_r - agg_r[perm.idx]
    h = _cross_gap(agg_c, agg_r, perm)
    return float(np.mean(0.5 * np.abs(gc) + 0.5 * np.abs(gr) - h))


def _check_partition(table: PostStratTable, obs: CellSet, unobs: CellSet) -> tuple:
    obs_ids = np.asarray(obs.ids)
    unobs_ids = np.asarray(unobs.ids)
    merged = np.concatenate([obs_ids, unobs_ids])
    if np.unique(merged).shape[0] != merged.shape[0]:
        raise BadPartition("observed and unobserved sets overlap")
    if merged.shape[0] != table.num_cells:
        raise BadPartition("observed and unobserved sets do not cover the table")
    if np.any(table.n_j[obs_ids] == 0):
        raise UnobservedCell(obs_ids[table.n_j[obs_ids] == 0].tolist())
    return obs_ids, unobs_ids


def partial_ref_se(pair: ReferencePair, obs: CellSet, unobs: CellSet) -> float:
    """Reference comparison over the whole table: PSIS-LOCO cell means on
    observed cells, full-fit cell means on unobserved cells, one squared
    weighted sum."""
    obs_ids, unobs_ids = _check_partition(pair.table, obs, unobs)
    total = float(pair.table.counts.sum())
    acc = 0.0
    if obs_ids.size:
        w = pair.table.counts[obs_ids].astype(float)
        acc += w @ (pair._cell_means("candidate", obs_ids, "psis")
                    - pair._cell_means("reference", obs_ids, "psis"))
    if unobs_ids.size:
        w = pair.table.counts[unobs_ids].astype(float)
        acc += w @ (pair._cell_means("candidate", unobs_ids, "full")
                    - pair._cell_means("reference", unobs_ids, "full"))
    return float((acc / total) ** 2)


def _mixed_draws(pair: ReferencePair, which: str, obs_ids, unobs_ids):
    parts = []
    if obs_ids.size:
        parts.append(pair._cell_draws(which, obs_ids, "psis"))
    if unobs_ids.size:
        parts.append(pair._cell_draws(which, unobs_ids, "full"))
    return np.concatenate(parts, axis=1) if parts else np.empty((pair.candidate.num_draws, 0))


def partial_ref_crps(pair: ReferencePair, obs: CellSet, unobs: CellSet,
                     perm: Permutation) -> float:
    """CRPS-family analogue of :func:`partial_ref_se`: resampled LOCO draws
    on observed cells, full-fit draws on unobserved cells, for both models."""
    obs_ids, unobs_ids = _check_partition(pair.table, obs, unobs)
    w = pair.table.counts[np.concatenate([obs_ids, unobs_ids])].astype(float)
    total = float(pair.table.counts.sum())
    xc = _mixed_draws(pair, "candidate", obs_ids, unobs_ids)
    xr = _mixed_draws(pair, "reference", obs_ids, unobs_ids)
    agg_c = xc @ w / total
    agg_r = xr @ w / total
    gc = agg_c - agg_c[perm.idx]
    gr = agg_r - agg_r[perm.idx]
    h = _cross_gap(agg_c, agg_r, perm)
    return float(np.mean(0.5 * np.abs(gc) + 0.5 * np.abs(gr) - h))


def combined_se(pair: ReferencePair, obs: CellSet, unobs: CellSet,
                truths_obs=None) -> float:
    """Cross-validation against sample estimates on observed cells, reference
    differences on unobserved cells, one squared weighted sum. Collapses to
    PSIS-LOCO squared error when every cell is observed."""
    obs_ids, unobs_ids = _check_partition(pair.table, obs, unobs)
    if truths_obs is None:
        truths_obs = sample_proxy_truths(pair.table, obs_ids)
    truths_obs = np.asarray(truths_obs, dtype=float)
    total = float(pair.table.counts.sum())
    acc = 0.0
    if obs_ids.size:
        w = pair.table.counts[obs_ids].astype(float)
        acc += w @ (pair._cell_means("candidate", obs_ids, "psis") - truths_obs)
    if unobs_ids.size:
        w = pair.table.counts[unobs_ids].astype(float)
        acc += w @ (pair._cell_means("candidate", unobs_ids, "full")
                    - pair._cell_means("reference", unobs_ids, "full"))
    return float((acc / total) ** 2)


def combined_crps(pair: ReferencePair, obs: CellSet, unobs: CellSet,
                  perm: Permutation, truths_obs=None) -> float:
    """CRPS-family combined validation.

    The candidate side is its LOCO predictive everywhere (resampled draws on
    observed cells, full-fit draws elsewhere). The comparison side is the
    cellwise sample estimate on observed cells and the reference predictive
    on unobserved cells; being a point mass on observed cells, its
    self-distance term keeps only the unobserved contribution and the whole
    expression reduces exactly to PSIS-LOCO CRPS when nothing is unobserved.
    """
    obs_ids, unobs_ids = _check_partition(pair.table, obs, unobs)
    if truths_obs is None:
        truths_obs = sample_proxy_truths(pair.table, obs_ids)
    truths_obs = np.asarray(truths_obs, dtype=float)
    total = float(pair.table.counts.sum())
    ndraws = pair.candidate.num_draws

    # candidate aggregate over every cell; comparison aggregate mixes the
    # constant sample estimates (observed) with reference draws (unobserved)
    xc = _mixed_draws(pair, "candidate", obs_ids, unobs_ids)
    w_all = pair.table.counts[np.concatenate([obs_ids, unobs_ids])].astype(float)
    agg_c = xc @ w_all / total
    agg_y = np.zeros(ndraws)
    if obs_ids.size:
        w_obs = pair.table.counts[obs_ids].astype(float)
        agg_y += float(w_obs @ truths_obs) / total
    if unobs_ids.size:
        xr_un = pair._cell_draws("reference", unobs_ids, "full")
        w_un = pair.table.counts[unobs_ids].astype(float)
        agg_y = agg_y + xr_un @ w_un / total

    gc = agg_c - agg_c[perm.idx]
    gr = agg_y - agg_y[perm.idx]
    h = _cross_gap(agg_c, agg_y, perm)
    return float(np.mean(0.5 * np.abs(gc) + 0.5 * np.abs(gr) - h))


def reference_check(candidates: dict, reference_label: str, table: PostStratTable,
                    perm: Permutation) -> dict:
    """Compare candidate orderings under cross-validation and reference
    scoring on the observed-cell subpopulation.

    ``candidates`` maps label -> (CellProbDraws, PsisResult) and must include
    ``reference_label``. Returns both score sets per family plus a Kendall
    rank-agreement statistic (1.0 = identical orderings).
    """
    if reference_label not in candidates:
        raise KeyError(f"reference {reference_label!r} missing from candidates")
    obs_ids = table.observed_ids()
    obs_set = CellSet("observed", obs_ids)
    truths = sample_proxy_truths(table, obs_ids)
    ref_draws, ref_psis = candidates[reference_label]

    report = {"reference": reference_label, "target": "observed", "families": {}}
    for family in ("SE", "CRPS"):
        cv_scores, ref_scores = {}, {}
        for label, (draws, psis) in candidates.items():
            if label == reference_label:
                continue
            pair = ReferencePair(candidate=draws, reference=ref_draws, table=table,
                                 candidate_psis=psis, reference_psis=ref_psis)
            if family == "SE":
                cv_scores[label] = psis_loco_se(draws, psis, table, obs_ids, truths)
                ref_scores[label] = ref_se(pair, obs_set, mode="psis")
            else:
                cv_scores[label] = psis_loco_crps(draws, psis, table, obs_ids, truths, perm)
                ref_scores[label] = ref_crps(pair, obs_set, perm, mode="psis")
        labels = sorted(cv_scores)
        tau = kendalltau([cv_scores[l] for l in labels],
                         [ref_scores[l] for l in labels]).statistic
        report["families"][family] = {
            "cross_validation": cv_scores,
            "reference": ref_scores,
            "rank_agreement": float(tau) if tau == tau else float("nan"),
        }
    return report
