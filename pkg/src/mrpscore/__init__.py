"""Cellwise scoring rules and leave-one-cell-out validation for
multilevel-regression-and-poststratification estimates."""

from .errors import (AllZeroWeights, BadPartition, CellMismatch,
                     DegenerateCovariate, EmptySet, InfeasibleConstraint,
                     MrpScoreError, TailTooSmall, UnknownLevel, UnobservedCell)
from .experiment import ExperimentPlan, ResultsStore, desk_plan, paper_plan, run, summarize
from .loco import (LocoCellPredictions, PsisResult, brute_force_loco,
                   gpd_fit_tail, level_average_score, psis_for_model,
                   psis_loco_crps, psis_loco_se, psis_smooth,
                   stratified_resample, raw_ratios, resampled_cell_draws)
from .model import CellProbDraws, McmcConfig, ModelSpec, STANDARD_MODELS, fit, log_lik_cell
from .mrp import EstimateDraws, aggregate, point_estimate
from .poststrat import CellSet, PostStratTable, build_table, cell_set, read_table_csv, write_table_csv
from .reference import (ReferencePair, combined_crps, combined_se,
                        partial_ref_crps, partial_ref_se, ref_crps, ref_se,
                        reference_check)
from .scoring import (Permutation, ScoreFamily, ScoreRecord, crps_cellwise,
                      crps_draws, mean_cell_crps, mean_cell_se,
                      sample_proxy_truths, se_cellwise, se_direct)
from .simulation import (Population, SampleCounts, SamplingConstraint, SimConfig,
                         discretize, draw_sample, generate_population,
                         write_population_csv)

__version__ = "0.1.0"
