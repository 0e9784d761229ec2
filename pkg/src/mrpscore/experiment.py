"""End-to-end simulation studies: replications, model sets, every score
variant, CSV persistence and summary extracts.

Each replication is a pure function of (plan, rep): population, sample,
table, one fit per model, PSIS per model, then the full battery of score
rows. Replications run in parallel across processes; the results file is
appended from the parent only, one completed replication at a time, which
also makes runs resumable (already-recorded replications are skipped).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .loco import (brute_force_loco, psis_for_model, psis_loco_crps,
                   psis_loco_se, resampled_cell_draws, _reweighted_cell_means)
from .model import CellProbDraws, McmcConfig, ModelSpec, fit
from .mrp import aggregate
from .poststrat import CellSet, PostStratTable, build_table, cell_set
from .reference import (ReferencePair, combined_crps, combined_se,
                        partial_ref_crps, partial_ref_se, ref_crps, ref_se)
from .scoring import (Permutation, ScoreRecord, crps_cellwise, crps_draws,
                      mean_cell_crps, mean_cell_se, sample_proxy_truths,
                      se_cellwise, se_direct)
from .seeds import stream_seed
from .simulation import SimConfig, draw_sample, generate_population

__all__ = ["ExperimentPlan", "ResultsStore", "run", "run_rep", "summarize",
           "desk_plan", "paper_plan"]

DEFAULT_MODELS = ("full", "precision", "bias", "nuisance")


@dataclass(frozen=True)
class ExperimentPlan:
    sim: SimConfig
    models: tuple = DEFAULT_MODELS
    reference: str | None = "full"
    replications: int = 10
    base_seed: int = 20_240_101
    out_dir: str = "results"
    mcmc: McmcConfig = field(default_factory=McmcConfig.desk)
    refit_mcmc: McmcConfig = field(default_factory=lambda: McmcConfig(
        chains=2, warmup=100, draws=250, total_draws=500))
    brute_reps: tuple = ()   # replication ids that also run brute-force LOCO
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "brute_reps", tuple(self.brute_reps))
        if self.reference is not None and self.reference not in self.models:
            raise ValueError("reference model must be among the fitted models")
        if self.replications < 1:
            raise ValueError("need at least one replication")

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["sim"]["sampling_constraint"] = self.sim.sampling_constraint.value
        return json.dumps(d, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        d = dict(d)
        d["sim"] = SimConfig(**d["sim"])
        if "mcmc" in d:
            d["mcmc"] = McmcConfig(**d["mcmc"])
        if "refit_mcmc" in d:
            d["refit_mcmc"] = McmcConfig(**d["refit_mcmc"])
        return cls(**d)


def desk_plan(out_dir: str = "results", base_seed: int = 20_240_101,
              constraint: str = "AllCellsObserved", brute: bool = False,
              workers: int = 1) -> ExperimentPlan:
    """Laptop-scale defaults: N=2,000, n=300, R=10, B=500."""
    sim = SimConfig(population_size=2_000, sample_size=300,
                    sampling_constraint=constraint, seed=0)
    return ExperimentPlan(
        sim=sim, replications=10, base_seed=base_seed, out_dir=out_dir,
        mcmc=McmcConfig(chains=2, warmup=500, draws=500, total_draws=500),
        brute_reps=tuple(range(10)) if brute else (),
        workers=workers)


def paper_plan(out_dir: str = "results", base_seed: int = 20_240_101,
               constraint: str = "AllCellsObserved", workers: int = 1) -> ExperimentPlan:
    """Study-scale defaults: N=20,000, n=1,000, R=100, B=1000."""
    sim = SimConfig(population_size=20_000, sample_size=1_000,
                    sampling_constraint=constraint, seed=0)
    return ExperimentPlan(
        sim=sim, replications=100, base_seed=base_seed, out_dir=out_dir,
        mcmc=McmcConfig.paper(),
        refit_mcmc=McmcConfig(chains=2, warmup=150, draws=500, total_draws=1000),
        workers=workers)


class ResultsStore:
    """Append-only scores.csv plus helpers to resume and reload."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.path = os.path.join(out_dir, "scores.csv")

    def completed_reps(self) -> set:
        if not os.path.exists(self.path):
            return set()
        df = pd.read_csv(self.path, usecols=["rep"])
        return set(df["rep"].unique().tolist())

    def append(self, records) -> None:
        os.makedirs(self.out_dir, exist_ok=True)
        new_file = not os.path.exists(self.path)
        with open(self.path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new_file:
                writer.writerow(ScoreRecord.CSV_COLUMNS)
            for rec in records:
                writer.writerow(rec.row())
            fh.flush()
            os.fsync(fh.fileno())

    def read(self) -> pd.DataFrame:
        return pd.read_csv(self.path)


def _score_rows_for_model(label: str, draws: CellProbDraws, psis, table: PostStratTable,
                          perm: Permutation, rep: int, seed: int,
                          brute_preds=None) -> list:
    rows = []
    all_ids = np.arange(table.num_cells)
    obs_ids = table.observed_ids()
    all_observed = obs_ids.shape[0] == table.num_cells
    w_all = table.counts.astype(float)
    w_obs = table.counts[obs_ids].astype(float)
    truths_all = table.true_prob
    truths_obs_pop = table.true_prob[obs_ids]
    proxies = sample_proxy_truths(table, obs_ids)
    cell_means = draws.cell_means()
    fit_flag = not draws.converged

    def rec(family, variant, value, kind="population", var="", lev="",
            khat=np.nan, flagged=False):
        rows.append(ScoreRecord(family=family, variant=variant, target_kind=kind,
                                target_variable=str(var), target_level=str(lev),
                                value=value, model=label, rep=rep, seed=seed,
                                khat_max=khat, flagged=bool(flagged or fit_flag)))

    pop_truth = table.population_truth
    est = aggregate(draws.probs, table, CellSet("population", all_ids), model=label)
    rec("SE", "truth-direct", se_direct(est, pop_truth))
    rec("CRPS", "truth-direct", crps_draws(est, pop_truth, perm))
    rec("SE", "truth-cellwise", se_cellwise(cell_means, truths_all, w_all))
    rec("CRPS", "truth-cellwise", crps_cellwise(draws.probs, truths_all, w_all, perm))
    rec("SE", "mean-cell-baseline", mean_cell_se(cell_means, truths_all, w_all))
    rec("CRPS", "mean-cell-baseline", mean_cell_crps(draws.probs, truths_all, w_all, perm))

    proxy_kind = "population" if all_observed else "observed"
    rec("SE", "sample-proxy",
        se_cellwise(cell_means[obs_ids], proxies, w_obs), kind=proxy_kind)
    rec("CRPS", "sample-proxy",
        crps_cellwise(draws.probs[:, obs_ids], proxies, w_obs, perm), kind=proxy_kind)

    khat = psis.khat_max(obs_ids)
    flag = psis.flagged(obs_ids)
    rec("SE", "PSIS-LOCO", psis_loco_se(draws, psis, table, obs_ids, proxies),
        kind=proxy_kind, khat=khat, flagged=flag)
    rec("CRPS", "PSIS-LOCO", psis_loco_crps(draws, psis, table, obs_ids, proxies, perm),
        kind=proxy_kind, khat=khat, flagged=flag)

    wmeans = _reweighted_cell_means(draws, psis, obs_ids)
    rw = resampled_cell_draws(draws, psis, obs_ids)
    rec("SE", "mean-cell-loco", mean_cell_se(wmeans, proxies, w_obs),
        kind=proxy_kind, khat=khat, flagged=flag)
    rec("CRPS", "mean-cell-loco", mean_cell_crps(rw, proxies, w_obs, perm),
        kind=proxy_kind, khat=khat, flagged=flag)

    if brute_preds is not None:
        cols = brute_preds.columns(obs_ids)
        bmeans = brute_preds.probs[:, cols].mean(axis=0)
        bflag = not bool(np.all(brute_preds.converged))
        rec("SE", "brute-LOCO", se_cellwise(bmeans, proxies, w_obs),
            kind=proxy_kind, flagged=bflag)
        rec("CRPS", "brute-LOCO", crps_cellwise(brute_preds.probs[:, cols], proxies, w_obs, perm),
            kind=proxy_kind, flagged=bflag)

    # per-level subpopulation scores and their per-variable averages
    for var in range(1, table.num_covariates + 1):
        level_truth = {"SE": [], "CRPS": []}
        level_loco = {"SE": [], "CRPS": []}
        for lev in range(table.levels_per_covariate):
            ids = cell_set(table, (var, lev)).ids
            if ids.size == 0 or table.counts[ids].sum() == 0:
                continue
            w = table.counts[ids].astype(float)
            v = se_cellwise(cell_means[ids], truths_all[ids], w)
            rec("SE", "truth-cellwise", v, kind="level", var=var, lev=lev)
            level_truth["SE"].append(v)
            v = crps_cellwise(draws.probs[:, ids], truths_all[ids], w, perm)
            rec("CRPS", "truth-cellwise", v, kind="level", var=var, lev=lev)
            level_truth["CRPS"].append(v)

            ids_obs = ids[table.n_j[ids] > 0]
            if ids_obs.size == 0:
                continue
            prox = sample_proxy_truths(table, ids_obs)
            k_lev, f_lev = psis.khat_max(ids_obs), psis.flagged(ids_obs)
            v = psis_loco_se(draws, psis, table, ids_obs, prox)
            rec("SE", "PSIS-LOCO", v, kind="level", var=var, lev=lev, khat=k_lev, flagged=f_lev)
            level_loco["SE"].append(v)
            v = psis_loco_crps(draws, psis, table, ids_obs, prox, perm)
            rec("CRPS", "PSIS-LOCO", v, kind="level", var=var, lev=lev, khat=k_lev, flagged=f_lev)
            level_loco["CRPS"].append(v)
        for family in ("SE", "CRPS"):
            if level_truth[family]:
                rec(family, "truth-cellwise", float(np.mean(level_truth[family])),
                    kind="level-mean", var=var)
            if level_loco[family]:
                rec(family, "PSIS-LOCO", float(np.mean(level_loco[family])),
                    kind="level-mean", var=var)
    return rows


def _reference_rows(label: str, pair: ReferencePair, table: PostStratTable,
                    perm: Permutation, rep: int, seed: int) -> list:
    rows = []
    obs_ids = table.observed_ids()
    unobs_ids = table.unobserved_ids()
    all_observed = unobs_ids.shape[0] == 0
    obs = CellSet("observed", obs_ids)
    unobs = CellSet("unobserved", unobs_ids)
    kind = "population" if all_observed else "observed"
    khat = max(pair.candidate_psis.khat_max(obs_ids), pair.reference_psis.khat_max(obs_ids))
    flag = pair.candidate_psis.flagged(obs_ids) or pair.reference_psis.flagged(obs_ids)
    fit_flag = not (pair.candidate.converged and pair.reference.converged)

    def rec(family, variant, value, k="population"):
        rows.append(ScoreRecord(family=family, variant=variant, target_kind=k,
                                target_variable="", target_level="", value=value,
                                model=label, rep=rep, seed=seed, khat_max=khat,
                                flagged=bool(flag or fit_flag)))

    rec("SE", "reference", ref_se(pair, obs, mode="psis"), kind)
    rec("CRPS", "reference", ref_crps(pair, obs, perm, mode="psis"), kind)
    rec("SE", "partial-reference", partial_ref_se(pair, obs, unobs))
    rec("CRPS", "partial-reference", partial_ref_crps(pair, obs, unobs, perm))
    rec("SE", "combined", combined_se(pair, obs, unobs))
    rec("CRPS", "combined", combined_crps(pair, obs, unobs, perm))
    return rows


def run_rep(plan: ExperimentPlan, rep: int) -> list:
    """All score rows for one replication (pure given plan and rep)."""
    seed = plan.base_seed
    sim = replace(plan.sim, seed=stream_seed(seed, rep, "sim"))
    pop = generate_population(sim)
    sample = draw_sample(pop, sim)
    table = build_table(pop, sample)
    perm = Permutation.draw(plan.mcmc.total_draws, stream_seed(seed, rep, "perm"))

    fits, psis = {}, {}
    for label in plan.models:
        spec = ModelSpec.from_label(label)
        fits[label] = fit(spec, table, plan.mcmc.with_seed(stream_seed(seed, rep, "mcmc", label)))
        psis[label] = psis_for_model(fits[label], table, stream_seed(seed, rep, "psis", label))

    rows = []
    for label in plan.models:
        brute_preds = None
        if rep in plan.brute_reps:
            brute_preds = brute_force_loco(
                ModelSpec.from_label(label), table, plan.mcmc,
                full_fit=fits[label],
                refit_mcmc=plan.refit_mcmc.with_seed(stream_seed(seed, rep, "brute", label)))
        rows.extend(_score_rows_for_model(label, fits[label], psis[label], table,
                                          perm, rep, seed, brute_preds))

    if plan.reference is not None:
        for label in plan.models:
            if label == plan.reference:
                continue
            pair = ReferencePair(candidate=fits[label], reference=fits[plan.reference],
                                 table=table, candidate_psis=psis[label],
                                 reference_psis=psis[plan.reference])
            rows.extend(_reference_rows(label, pair, table, perm, rep, seed))
    return rows


def run(plan: ExperimentPlan) -> ResultsStore:
    """Execute the plan, skipping replications already on disk."""
    store = ResultsStore(plan.out_dir)
    os.makedirs(plan.out_dir, exist_ok=True)
    done = store.completed_reps()
    todo = [r for r in range(plan.replications) if r not in done]
    if not todo:
        return store

    if plan.workers <= 1:
        for rep in todo:
            try:
                store.append(run_rep(plan, rep))
            except Exception as exc:  # keep the sweep alive
                print(f"rep {rep} failed: {exc!r}", file=sys.stderr)
        return store

    with ProcessPoolExecutor(max_workers=plan.workers) as pool:
        futures = {pool.submit(run_rep, plan, rep): rep for rep in todo}
        for fut in as_completed(futures):
            rep = futures[fut]
            try:
                store.append(fut.result())
            except Exception as exc:
                print(f"rep {rep} failed: {exc!r}", file=sys.stderr)
    return store


def _pivot(df: pd.DataFrame) -> pd.DataFrame:
    pop = df[df["target_kind"].isin(["population", "observed"])]
    return pop.pivot_table(index=["rep", "model", "family"], columns="variant",
                           values="value", aggfunc="first").reset_index()


def summarize(store: ResultsStore, report_dir: str | None = None) -> dict:
    """Per-figure extracts, ordering-preservation rates and
    underestimation-direction rates. Writes CSVs when ``report_dir`` given."""
    df = store.read()
    wide = _pivot(df)
    summary = {"rows": int(len(df)), "reps": int(df["rep"].nunique()),
               "models": sorted(df["model"].unique().tolist())}

    estimators = [v for v in ("sample-proxy", "PSIS-LOCO", "brute-LOCO", "combined")
                  if v in wide.columns]
    direction = []
    for family, sub in wide.groupby("family"):
        if "truth-cellwise" not in sub.columns:
            continue
        for est in estimators:
            ok = sub[est].notna() & sub["truth-cellwise"].notna()
            if not ok.any():
                continue
            if family == "SE":
                frac = float((sub.loc[ok, est] < sub.loc[ok, "truth-cellwise"]).mean())
            else:
                frac = float((sub.loc[ok, est] > sub.loc[ok, "truth-cellwise"]).mean())
            direction.append({"family": family, "variant": est,
                              "underestimate_rate": frac, "n": int(ok.sum())})
    direction = pd.DataFrame(direction)

    ordering = []
    for family in wide["family"].unique():
        fam = wide[wide["family"] == family]
        for variant in ["truth-cellwise"] + estimators:
            if variant not in fam.columns:
                continue
            byrep = fam.pivot_table(index="rep", columns="model", values=variant,
                                    aggfunc="first")
            models = [m for m in byrep.columns]
            for a in models:
                for b in models:
                    if a >= b:
                        continue
                    vals = byrep[[a, b]].dropna()
                    if vals.empty:
                        continue
                    better = (vals[a] < vals[b]) if family == "SE" else (vals[a] > vals[b])
                    ordering.append({"family": family, "variant": variant,
                                     "model_a": a, "model_b": b,
                                     "a_better_rate": float(better.mean()),
                                     "n_reps": int(len(vals))})
    ordering = pd.DataFrame(ordering)

    levels = df[df["target_kind"] == "level-mean"]
    level_means = levels.pivot_table(
        index=["rep", "model", "family", "target_variable"], columns="variant",
        values="value", aggfunc="first").reset_index()

    if report_dir:
        os.makedirs(report_dir, exist_ok=True)
        wide.to_csv(os.path.join(report_dir, "population_scores_wide.csv"), index=False)
        direction.to_csv(os.path.join(report_dir, "direction_rates.csv"), index=False)
        ordering.to_csv(os.path.join(report_dir, "ordering_rates.csv"), index=False)
        level_means.to_csv(os.path.join(report_dir, "level_means.csv"), index=False)

    summary["direction_rates"] = direction
    summary["ordering_rates"] = ordering
    summary["population_wide"] = wide
    summary["level_means"] = level_means
    return summary
