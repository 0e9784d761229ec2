from dataclasses import replace

import numpy as np
import pytest

from mrpscore.errors import DegenerateCovariate, InfeasibleConstraint
from mrpscore.simulation import (SamplingConstraint, SimConfig, discretize,
                                 draw_sample, generate_population)


def small_config(**overrides):
    base = dict(population_size=2_000, sample_size=300, seed=11,
                sampling_constraint="AllCellsObserved")
    base.update(overrides)
    return SimConfig(**base)


def test_discretize_equal_width_boundaries():
    idx, edges = discretize([0, 1, 2, 3, 4, 5], levels=5)
    assert idx.tolist() == [0, 0, 1, 2, 3, 4]
    assert np.allclose(edges, [0, 1, 2, 3, 4, 5])


def test_discretize_constant_vector_raises():
    with pytest.raises(DegenerateCovariate):
        discretize([2.0, 2.0, 2.0], levels=5)


def test_discretize_indices_in_range():
    rng = np.random.default_rng(5)
    for _ in range(20):
        vals = rng.normal(size=200) * rng.uniform(0.1, 10)
        idx, _ = discretize(vals, levels=5)
        assert idx.min() >= 0 and idx.max() <= 4


def test_zero_outcome_coefs_give_half_probability():
    cfg = small_config(outcome_coefs=(0, 0, 0, 0))
    pop = generate_population(cfg)
    assert np.allclose(pop.outcome_prob, 0.5)


def test_population_regeneration_is_bit_identical():
    cfg = small_config()
    a, b = generate_population(cfg), generate_population(cfg)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.y, b.y)
    s1, s2 = draw_sample(a, cfg), draw_sample(b, cfg)
    assert np.array_equal(s1.indices, s2.indices)


def test_inclusion_probabilities_strictly_inside_unit_interval():
    pop = generate_population(small_config())
    assert pop.pi.min() > 0 and pop.pi.max() < 1
    assert np.array_equal(pop.cell_levels[pop.cell_of], pop.levels)


def test_sample_counts_sum_to_n():
    cfg = small_config()
    pop = generate_population(cfg)
    sample = draw_sample(pop, cfg)
    assert sample.n_j.sum() == cfg.sample_size
    assert np.all(sample.y_j <= sample.n_j)


def test_all_cells_observed_puts_one_in_every_cell():
    cfg = small_config()
    pop = generate_population(cfg)
    sample = draw_sample(pop, cfg)
    assert sample.n_j.min() >= 1


def test_all_levels_observed_covers_every_level():
    cfg = small_config(sampling_constraint="AllLevelsObserved", sample_size=100)
    pop = generate_population(cfg)
    sample = draw_sample(pop, cfg)
    sampled_levels = pop.levels[sample.indices]
    for kk in range(cfg.num_covariates):
        assert set(sampled_levels[:, kk]) == set(range(cfg.levels_per_covariate))


def test_infeasible_when_seeding_exceeds_sample_size():
    cfg = small_config(sample_size=50)  # ~250 cells need seeding
    pop = generate_population(cfg)
    with pytest.raises(InfeasibleConstraint):
        draw_sample(pop, cfg)


def test_inclusion_frequency_monotone_in_pi_deciles():
    cfg = small_config(sampling_constraint="Unconstrained", population_size=2_000,
                       sample_size=300)
    pop = generate_population(cfg)
    deciles = np.quantile(pop.pi, np.linspace(0, 1, 11))
    decile_of = np.clip(np.searchsorted(deciles, pop.pi, side="right") - 1, 0, 9)
    hits = np.zeros(10)
    totals = np.bincount(decile_of, minlength=10)
    for rep in range(120):
        sample = draw_sample(pop, replace(cfg, seed=1000 + rep))
        hits += np.bincount(decile_of[sample.indices], minlength=10)
    freq = hits / (totals * 120)
    assert np.all(np.diff(freq) > 0)


def test_uniform_inclusion_reduces_to_simple_random_sampling_rates():
    cfg = small_config(sampling_constraint="Unconstrained",
                       inclusion_coefs=(0, 0, 0, 0), population_size=1_000,
                       sample_size=200)
    pop = generate_population(cfg)
    assert np.allclose(pop.pi, 0.5)
    counts = np.zeros(pop.size)
    for rep in range(200):
        sample = draw_sample(pop, replace(cfg, seed=rep))
        counts[sample.indices] += 1
    rates = counts / 200
    # every individual included at the uniform n/N rate, up to MC error
    assert abs(rates.mean() - 0.2) < 1e-12
    assert rates.std() < 0.05


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(sample_size=5_000)
    with pytest.raises(ValueError):
        small_config(outcome_coefs=(1, 2))
    with pytest.raises(ValueError):
        small_config(levels_per_covariate=1)
    assert small_config().sampling_constraint is SamplingConstraint.ALL_CELLS_OBSERVED
