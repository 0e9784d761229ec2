"""Command-line interface.

Subcommands: ``simulate`` (population/sample/table CSVs), ``fit`` (one
model -> draws CSV + diagnostics JSON), ``score`` (score rows from table
and draws files), ``run`` (full experiment plan), ``report`` (summary
extracts from a scores.csv).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .experiment import (ExperimentPlan, ResultsStore, desk_plan, paper_plan,
                         run as run_plan, summarize)
from .loco import psis_for_model, psis_loco_crps, psis_loco_se
from .model import CellProbDraws, McmcConfig, ModelSpec, fit
from .poststrat import build_table, read_table_csv, write_table_csv
from .scoring import (Permutation, ScoreRecord, crps_cellwise, crps_draws,
                      mean_cell_crps, mean_cell_se, sample_proxy_truths,
                      se_cellwise)
from .seeds import stream_seed
from .simulation import SimConfig, draw_sample, generate_population, write_population_csv


def _write_draws_csv(path, draws: CellProbDraws):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iteration"] + [f"cell{j}" for j in range(draws.num_cells)])
        for b in range(draws.num_draws):
            writer.writerow([int(draws.chain_id[b]), int(draws.iter_id[b])]
                            + [repr(float(v)) for v in draws.probs[b]])


def _read_draws_csv(path) -> CellProbDraws:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = np.asarray([[float(v) for v in row] for row in rows[1:]])
    return CellProbDraws(probs=body[:, 2:], model="", chain_id=body[:, 0].astype(int),
                         iter_id=body[:, 1].astype(int))


def _sim_config(args) -> SimConfig:
    base = dict(population_size=2_000, sample_size=300) if args.scale == "desk" \
        else dict(population_size=20_000, sample_size=1_000)
    if args.population_size:
        base["population_size"] = args.population_size
    if args.sample_size:
        base["sample_size"] = args.sample_size
    return SimConfig(seed=args.seed, sampling_constraint=args.constraint, **base)


def _cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    pop = generate_population(cfg)
    sample = draw_sample(pop, cfg)
    table = build_table(pop, sample)
    os.makedirs(args.out, exist_ok=True)
    write_population_csv(os.path.join(args.out, "population.csv"), pop, sample)
    write_table_csv(os.path.join(args.out, "table.csv"), table)
    print(f"wrote population.csv and table.csv to {args.out} "
          f"(J={table.num_cells}, observed={len(table.observed_ids())})")
    return 0


def _mcmc_config(args) -> McmcConfig:
    mc = McmcConfig.desk(args.seed) if args.scale == "desk" else McmcConfig.paper(args.seed)
    if args.chains:
        mc = McmcConfig(chains=args.chains, warmup=mc.warmup, draws=mc.draws,
                        total_draws=mc.total_draws, seed=args.seed)
    return mc


def _cmd_fit(args) -> int:
    table = read_table_csv(args.table)
    spec = ModelSpec.from_label(args.model)
    draws = fit(spec, table, _mcmc_config(args))
    _write_draws_csv(args.out, draws)
    if args.diagnostics:
        with open(args.diagnostics, "w") as fh:
            json.dump(draws.diagnostics, fh, indent=2, default=float)
    print(f"fit {args.model}: B={draws.num_draws} cells={draws.num_cells} "
          f"rhat_max={draws.diagnostics['rhat_max']:.3f} converged={draws.converged}")
    return 0


def _cmd_score(args) -> int:
    table = read_table_csv(args.table)
    draws = _read_draws_csv(args.draws)
    draws.model = args.model
    perm = Permutation.draw(draws.num_draws, stream_seed(args.seed, "perm"))
    obs = table.observed_ids()
    records = []

    def rec(family, variant, value, kind="population"):
        records.append(ScoreRecord(family=family, variant=variant, target_kind=kind,
                                   target_variable="", target_level="", value=value,
                                   model=args.model, rep=0, seed=args.seed))

    w = table.counts.astype(float)
    means = draws.cell_means()
    kind = "population" if obs.shape[0] == table.num_cells else "observed"
    if args.truth == "population":
        rec("SE", "truth-cellwise", se_cellwise(means, table.true_prob, w))
        rec("CRPS", "truth-cellwise", crps_cellwise(draws.probs, table.true_prob, w, perm))
        rec("SE", "mean-cell-baseline", mean_cell_se(means, table.true_prob, w))
        rec("CRPS", "mean-cell-baseline", mean_cell_crps(draws.probs, table.true_prob, w, perm))
    proxies = sample_proxy_truths(table, obs)
    w_obs = table.counts[obs].astype(float)
    rec("SE", "sample-proxy", se_cellwise(means[obs], proxies, w_obs), kind)
    rec("CRPS", "sample-proxy", crps_cellwise(draws.probs[:, obs], proxies, w_obs, perm), kind)
    psis = psis_for_model(draws, table, stream_seed(args.seed, "psis"))
    rec("SE", "PSIS-LOCO", psis_loco_se(draws, psis, table, obs, proxies), kind)
    rec("CRPS", "PSIS-LOCO", psis_loco_crps(draws, psis, table, obs, proxies, perm), kind)

    new_file = not os.path.exists(args.out)
    with open(args.out, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(ScoreRecord.CSV_COLUMNS)
        for r in records:
            writer.writerow(r.row())
    print(f"appended {len(records)} score rows to {args.out}")
    return 0


def _cmd_run(args) -> int:
    if args.plan:
        with open(args.plan) as fh:
            plan = ExperimentPlan.from_dict(json.load(fh))
        if args.out:
            plan = ExperimentPlan.from_dict({**json.loads(plan.to_json()), "out_dir": args.out})
    else:
        factory = desk_plan if args.scale == "desk" else paper_plan
        plan = factory(out_dir=args.out or "results", base_seed=args.seed,
                       constraint=args.constraint, workers=args.workers)
    if args.workers:
        plan = ExperimentPlan.from_dict({**json.loads(plan.to_json()), "workers": args.workers})
    store = run_plan(plan)
    print(f"scores at {store.path}")
    return 0


def _cmd_report(args) -> int:
    store = ResultsStore(os.path.dirname(args.scores) or ".")
    store.path = args.scores
    summary = summarize(store, report_dir=args.out)
    print(f"report written to {args.out} ({summary['rows']} rows, "
          f"{summary['reps']} reps, models: {', '.join(summary['models'])})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mrpscore",
                                     description="Scoring MRP estimates: simulate, fit, score, run, report.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--scale", choices=["desk", "paper"], default="desk")

    p = sub.add_parser("simulate", help="generate a population, sample and table")
    common(p)
    p.add_argument("--constraint", default="AllCellsObserved",
                   choices=["AllCellsObserved", "AllLevelsObserved", "Unconstrained"])
    p.add_argument("--population-size", type=int, default=0)
    p.add_argument("--sample-size", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit one model to a table CSV")
    common(p)
    p.add_argument("--table", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--chains", type=int, default=0)
    p.add_argument("--out", required=True, help="draws CSV path")
    p.add_argument("--diagnostics", default="", help="optional diagnostics JSON path")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("score", help="score a draws CSV against a table CSV")
    common(p)
    p.add_argument("--table", required=True)
    p.add_argument("--draws", required=True)
    p.add_argument("--model", default="model")
    p.add_argument("--truth", choices=["population", "sample"], default="population")
    p.add_argument("--out", required=True, help="scores CSV (appended)")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("run", help="run a full experiment plan")
    common(p)
    p.add_argument("--plan", default="", help="plan JSON file")
    p.add_argument("--constraint", default="AllCellsObserved",
                   choices=["AllCellsObserved", "AllLevelsObserved", "Unconstrained"])
    p.add_argument("--out", default="")
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="summaries from a scores.csv")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
