import numpy as np
import pytest

from mrpscore.errors import CellMismatch, EmptySet, UnknownLevel
from mrpscore.poststrat import (PostStratTable, build_table, cell_set,
                                read_table_csv, require_nonempty, write_table_csv)
from mrpscore.simulation import SimConfig, draw_sample, generate_population


@pytest.fixture(scope="module")
def pop_sample_table():
    cfg = SimConfig(population_size=2_000, sample_size=300, seed=3,
                    sampling_constraint="AllCellsObserved")
    pop = generate_population(cfg)
    sample = draw_sample(pop, cfg)
    return pop, sample, build_table(pop, sample)


def test_weighted_cell_truths_recover_population_mean(pop_sample_table):
    pop, _, table = pop_sample_table
    direct = pop.y.mean()
    assert abs(table.population_truth - direct) < 1e-12
    assert table.total == pop.size


def test_cell_count_bound(pop_sample_table):
    _, _, table = pop_sample_table
    assert table.num_cells <= 5 ** 4
    assert np.all(table.true_prob >= 0) and np.all(table.true_prob <= 1)


def test_paper_scale_occupied_cells_in_plausible_band():
    # the study design at N=20,000 lands near three hundred occupied cells;
    # the exact count depends on the stream, so assert the scale only
    cfg = SimConfig(population_size=20_000, sample_size=1_000, seed=0,
                    sampling_constraint="AllLevelsObserved")
    pop = generate_population(cfg)
    assert 240 <= pop.num_cells <= 360


def test_population_descriptor_returns_all_cells(pop_sample_table):
    _, _, table = pop_sample_table
    assert len(cell_set(table, "population")) == table.num_cells


def test_variable_levels_partition_table(pop_sample_table):
    _, _, table = pop_sample_table
    for var in range(1, table.num_covariates + 1):
        ids = [cell_set(table, (var, lev)).ids for lev in range(table.levels_per_covariate)]
        merged = np.sort(np.concatenate(ids))
        assert np.array_equal(merged, np.arange(table.num_cells))
        assert sum(table.counts[i].sum() for i in ids) == table.total


def test_observed_unobserved_partition(pop_sample_table):
    _, _, table = pop_sample_table
    obs = cell_set(table, "observed").ids
    unobs = cell_set(table, "unobserved").ids
    assert np.intersect1d(obs, unobs).size == 0
    assert obs.size + unobs.size == table.num_cells


def test_unknown_descriptors_raise(pop_sample_table):
    _, _, table = pop_sample_table
    with pytest.raises(UnknownLevel):
        cell_set(table, (9, 0))
    with pytest.raises(UnknownLevel):
        cell_set(table, (1, 99))
    with pytest.raises(UnknownLevel):
        cell_set(table, "nonsense")
    with pytest.raises(EmptySet):
        require_nonempty(table, cell_set(table, []))


def test_invalid_counts_rejected():
    levels = np.array([[0, 0], [0, 1]])
    with pytest.raises(CellMismatch):
        PostStratTable(levels, [0, 5], [0.5, 0.5], [0, 1], [0, 0])
    with pytest.raises(CellMismatch):
        PostStratTable(levels, [5, 5], [0.5, 0.5], [6, 1], [0, 0])
    with pytest.raises(CellMismatch):
        PostStratTable(levels, [5, 5], [0.5, 0.5], [2, 1], [3, 0])


def test_csv_round_trip(tmp_path, pop_sample_table):
    _, _, table = pop_sample_table
    path = tmp_path / "table.csv"
    write_table_csv(path, table)
    back = read_table_csv(path)
    assert np.array_equal(back.levels, table.levels)
    assert np.array_equal(back.counts, table.counts)
    assert np.allclose(back.true_prob, table.true_prob)
    assert np.array_equal(back.n_j, table.n_j)
    assert np.array_equal(back.y_j, table.y_j)


def test_without_cell_zeroes_single_cell(pop_sample_table):
    _, _, table = pop_sample_table
    j = int(table.observed_ids()[0])
    reduced = table.without_cell(j)
    assert reduced.n_j[j] == 0 and reduced.y_j[j] == 0
    assert reduced.n_j.sum() == table.n_j.sum() - table.n_j[j]
