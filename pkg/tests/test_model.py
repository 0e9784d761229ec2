import numpy as np
import pytest
from scipy.special import gammaln
from scipy.stats import spearmanr

from mrpscore.model import CellProbDraws, McmcConfig, ModelSpec, fit, log_lik_cell
from mrpscore.poststrat import PostStratTable, build_table
from mrpscore.simulation import SimConfig, draw_sample, generate_population

INTERCEPT_ONLY = ModelSpec(label="intercept", included_covariates=())


def two_cell_table(n=(0, 0), y=(0, 0)):
    return PostStratTable(np.array([[0], [1]]), [50, 50], [0.5, 0.5], list(n), list(y))


def test_model_spec_registry_and_validation():
    assert ModelSpec.from_label("full").included_covariates == (1, 2, 3, 4)
    assert ModelSpec.from_label("bias").included_covariates == (1, 3, 4)
    with pytest.raises(KeyError):
        ModelSpec.from_label("everything")
    with pytest.raises(ValueError):
        ModelSpec(label="bad", included_covariates=(1,), sd_prior_scale=0)


def test_intercept_only_symmetric_data_centers_on_half():
    table = two_cell_table(n=(20, 20), y=(10, 10))
    draws = fit(INTERCEPT_ONLY, table, McmcConfig(chains=2, warmup=400, draws=400,
                                                  total_draws=500, seed=3))
    assert abs(draws.probs.mean() - 0.5) < 0.03


def test_fit_is_deterministic_given_seed():
    table = two_cell_table(n=(5, 7), y=(2, 6))
    mc = McmcConfig(chains=2, warmup=200, draws=200, total_draws=300, seed=17)
    a = fit(ModelSpec(label="m", included_covariates=(1,)), table, mc)
    b = fit(ModelSpec(label="m", included_covariates=(1,)), table, mc)
    assert np.array_equal(a.probs, b.probs)
    assert np.array_equal(a.chain_id, b.chain_id)


def test_draws_strictly_inside_unit_interval():
    table = two_cell_table(n=(1, 1), y=(1, 0))
    draws = fit(ModelSpec(label="m", included_covariates=(1,)), table,
                McmcConfig(chains=2, warmup=300, draws=300, total_draws=400, seed=5))
    assert np.isfinite(draws.probs).all()
    assert draws.probs.min() > 0 and draws.probs.max() < 1
    assert draws.num_draws == 400


def test_log_lik_cell_closed_forms():
    probs = np.array([[0.3], [0.5], [0.9]])
    draws = CellProbDraws(probs=probs, model="m", chain_id=np.zeros(3, int),
                          iter_id=np.arange(3))
    np.testing.assert_allclose(log_lik_cell(draws, 0, 1, 1), np.log(probs[:, 0]))
    half = CellProbDraws(probs=np.full((4, 1), 0.5), model="m",
                         chain_id=np.zeros(4, int), iter_id=np.arange(4))
    np.testing.assert_allclose(log_lik_cell(half, 0, 2, 1), np.log(0.5))


def test_log_lik_cell_matches_independent_pmf_oracle():
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = int(rng.integers(1, 20))
        y = int(rng.integers(0, n + 1))
        p = float(rng.uniform(0.01, 0.99))
        draws = CellProbDraws(probs=np.array([[p]]), model="m",
                              chain_id=np.zeros(1, int), iter_id=np.zeros(1, int))
        # brute-force pmf: log [ n! / (y! (n-y)!) p^y (1-p)^(n-y) ]
        expected = (gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
                    + y * np.log(p) + (n - y) * np.log(1 - p))
        assert log_lik_cell(draws, 0, n, y)[0] == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        log_lik_cell(draws, 0, 0, 0)


def test_prior_only_fit_recovers_intercept_prior_sd():
    table = two_cell_table()  # nothing observed: draws come from the prior
    draws = fit(INTERCEPT_ONLY, table,
                McmcConfig(chains=4, warmup=2000, draws=5000, total_draws=20000, seed=0))
    mcmc_sd = draws.params["beta0"].std()
    rng = np.random.default_rng(7)
    direct = (rng.standard_t(3, size=1_000_000) * 2.5).std()
    assert abs(mcmc_sd / direct - 1.0) < 0.2


def test_full_model_cell_means_track_truth_at_survey_scale():
    cfg = SimConfig(population_size=20_000, sample_size=1_000, seed=5,
                    sampling_constraint="AllCellsObserved")
    pop = generate_population(cfg)
    table = build_table(pop, draw_sample(pop, cfg))
    draws = fit(ModelSpec.from_label("full"), table,
                McmcConfig(chains=2, warmup=500, draws=500, total_draws=500, seed=1))
    corr = spearmanr(draws.cell_means(), table.true_prob).statistic
    assert corr > 0.5
    assert corr == pytest.approx(0.9145, abs=0.03)  # frozen oracle value


def test_hierarchical_sd_shrinks_for_null_covariate():
    cfg = SimConfig(population_size=2_000, sample_size=300, seed=9,
                    outcome_coefs=(0, 1, 0.1, 1),
                    sampling_constraint="AllCellsObserved")
    pop = generate_population(cfg)
    table = build_table(pop, draw_sample(pop, cfg))
    draws = fit(ModelSpec.from_label("full"), table,
                McmcConfig(chains=2, warmup=500, draws=500, total_draws=500, seed=2))
    medians = np.median(draws.params["sigma"], axis=0)
    assert medians[0] < medians[1]  # null covariate vs strongest covariate


def test_unobserved_level_prediction_mixes_over_prior():
    levels = np.arange(5)[:, None]
    table = PostStratTable(levels, [10] * 5, [0.5] * 5, [5, 5, 5, 5, 0], [2, 3, 2, 3, 0])
    draws = fit(ModelSpec(label="one", included_covariates=(1,)), table,
                McmcConfig(chains=2, warmup=400, draws=400, total_draws=500, seed=1))
    # the never-observed level still gets predictions, wider than observed ones
    assert draws.probs[:, 4].std() > draws.probs[:, 0].std()


def test_nonconvergence_is_flagged_not_raised():
    table = two_cell_table(n=(5, 7), y=(2, 6))
    draws = fit(ModelSpec(label="m", included_covariates=(1,)), table,
                McmcConfig(chains=2, warmup=10, draws=40, total_draws=40, seed=8,
                           rhat_threshold=1.0001))
    assert isinstance(draws.converged, bool)
    assert not draws.converged
