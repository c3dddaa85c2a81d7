# test_mechanism_opt.py
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from advertiser_behavior import ParametricTransition, kpi_independent_model
from auction_core import AdvertiserProfile, BidSpace, Mechanism, expected_period_revenue
from exceptions import ConfigError, InvalidInputError
from mechanism_opt import (DEFAULT_ALPHA_GRID, GeneticOptimizer, GpConfig, dla_revenues, dla_select,
                           gp_optimize, wca_revenue, wca_select, write_optimizer_report)
from revenue_sim import DeltaCache, RevenueEstimate, TrajectoryConfig, simulate_trajectory


def stub(alpha):
    return -(alpha - 1.3) ** 2


def ads(ctrs, valuations=None):
    valuations = valuations or [5.0] * len(ctrs)
    return [AdvertiserProfile(i, c, v, 1.0) for i, (c, v) in enumerate(zip(ctrs, valuations))]


@pytest.mark.parametrize("seed", range(20))
def test_gp_finds_stub_optimum(seed):
    grid = np.arange(0.0, 3.0005, 0.001)
    oracle = grid[np.argmax([stub(a) for a in grid])]
    result = GeneticOptimizer(GpConfig(rng_seed=seed), stub).run()
    assert abs(result.best.alpha - oracle) <= 0.05


def test_gp_identical_population_without_mutation_noise():
    cfg = GpConfig(population=6, generations=8, mutation_sigma=0.0, rng_seed=1)
    result = GeneticOptimizer(cfg, stub).run(initial=[0.7] * 6)
    assert result.best_alpha_series == [0.7] * 8
    assert result.best.alpha == 0.7
    assert result.flat_fitness


def test_gp_best_fitness_never_decreases():
    result = GeneticOptimizer(GpConfig(generations=30, rng_seed=3), stub).run()
    series = np.array(result.best_fitness_series)
    assert len(series) == 30
    assert np.all(np.diff(series) >= 0)
    assert result.best.fitness == series[-1]


def test_gp_keeps_alphas_in_range():
    seen = []

    def fitness(alpha):
        seen.append(alpha)
        return np.sin(3 * alpha)

    cfg = GpConfig(generations=20, alpha_range=(0.5, 1.5), mutation_sigma=0.5, rng_seed=4)
    GeneticOptimizer(cfg, fitness).run()
    assert min(seen) >= 0.5 and max(seen) <= 1.5


def test_gp_with_delta_cache_reuses_neighbors():
    cache = DeltaCache(delta=0.01)

    def fitness(alpha):
        estimate = cache.get_or_compute(alpha, lambda: RevenueEstimate(alpha, stub(alpha), np.array([stub(alpha)])))
        return estimate.empirical_revenue

    optimizer = GeneticOptimizer(GpConfig(rng_seed=5), fitness)
    result = optimizer.run()
    assert cache.misses < result.evaluations
    assert cache.hits > 0
    assert cache.misses == len(cache)


def test_gp_same_seed_same_report(tmp_path):
    paths = []
    for name in ('first.tsv', 'second.tsv'):
        result = GeneticOptimizer(GpConfig(generations=10, rng_seed=9), stub).run()
        path = tmp_path / name
        write_optimizer_report(result, str(path))
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    report = pd.read_csv(paths[0], sep='\t')
    assert report.columns.tolist() == ['generation', 'best_fitness', 'mean_fitness', 'best_alpha']
    assert report['generation'].tolist() == list(range(1, 11))


@pytest.mark.parametrize("overrides", [
    {'crossover_rate': 0.6},
    {'population': 1},
    {'alpha_range': (2.0, 2.0)},
    {'elitism': 10},
])
def test_gp_config_validation(overrides):
    with pytest.raises(ConfigError):
        GpConfig(**overrides)


def test_gp_optimize_on_simulated_revenue():
    space = BidSpace(1.0, 3.0, 1.0)
    profiles = ads([0.2, 0.6, 0.4])
    model = kpi_independent_model(space, [np.full((3, 3), 1 / 3)] * 3)
    mech = Mechanism(1.0, 2, (1.0, 0.5), space.min_bid)
    sim_cfg = TrajectoryConfig(horizon=30, initial_bids=[1.0, 2.0, 3.0], user_stream_pool=(5, 10), rng_seed=0)
    cache = DeltaCache(0.01)
    result = gp_optimize(model, profiles, mech, GpConfig(population=4, generations=3, rng_seed=2), sim_cfg, cache)
    assert 0.0 <= result.best.alpha <= 3.0
    assert result.best.fitness >= 0
    assert cache.misses == len(cache)
    assert len(result.history_frame()) == 3


def test_dla_single_advertiser_returns_first_grid_point():
    profiles = ads([0.3])
    mech = Mechanism(1.0, 1, (1.0,), 0.5)
    assert dla_select([np.array([2.0])] * 3, [10, 20], profiles, [0.5, 1.0, 2.0], mech) == 0.5


def test_dla_matches_exhaustive_grid():
    profiles = ads([0.8, 0.2, 0.5])
    mech = Mechanism(1.0, 2, (1.0, 0.6), 0.1)
    history = [np.array([1.0, 4.0, 2.0]), np.array([1.5, 3.5, 2.0]), np.array([1.0, 4.0, 3.0])]
    pool = [10, 30, 20]
    grid = list(DEFAULT_ALPHA_GRID)
    oracle = [np.mean([expected_period_revenue(b, profiles, mech.with_alpha(a), pool[t])
                       for t, b in enumerate(history)]) for a in grid]
    assert np.allclose(dla_revenues(history, pool, profiles, grid, mech), oracle)
    assert dla_select(history, pool, profiles, grid, mech) == grid[int(np.argmax(oracle))]


def test_dla_singleton_and_empty_grids():
    profiles = ads([0.3, 0.4])
    mech = Mechanism(1.0, 1, (1.0,), 0.5)
    assert dla_select([np.array([1.0, 2.0])], [5], profiles, [1.7], mech) == 1.7
    with pytest.raises(InvalidInputError):
        dla_select([np.array([1.0, 2.0])], [5], profiles, [], mech)
    with pytest.raises(InvalidInputError):
        dla_select([], [5], profiles, [1.0], mech)


def test_wca_single_slot_single_ad():
    assert wca_revenue(ads([0.4], [6.0]), 1.0, (1.0,), 0.5) == pytest.approx(0.5)


def test_wca_two_ads_hand_recursion():
    min_bid = 0.5
    profiles = ads([0.3, 0.3], [10.0, 4.0])
    top_payment = 0.5 * 4.0 + 0.5 * min_bid
    expected = 1.0 * top_payment + 0.5 * min_bid
    for alpha in (0.0, 1.0, 2.5):
        assert wca_revenue(profiles, alpha, (1.0, 0.5), min_bid) == pytest.approx(expected)


def test_wca_select_matches_grid_oracle():
    profiles = ads([0.1, 0.5, 0.3, 0.05], [8.0, 3.0, 5.0, 9.0])
    discounts = (1.0, 0.7, 0.4)
    grid = list(DEFAULT_ALPHA_GRID)
    revenues = [wca_revenue(profiles, a, discounts, 0.2) for a in grid]
    assert wca_select(profiles, grid, discounts, 0.2) == grid[int(np.argmax(revenues))]
    assert wca_select(profiles, grid, discounts, 0.2) == wca_select(profiles, grid, discounts, 0.2)


def test_wca_symmetric_profiles_return_first_grid_point():
    profiles = ads([0.2, 0.2, 0.2], [5.0, 5.0, 5.0])
    assert wca_select(profiles, [0.3, 1.0, 2.0], (1.0, 0.5), 0.1) == 0.3


def test_wca_rejects_increasing_discounts():
    with pytest.raises(InvalidInputError):
        wca_revenue(ads([0.2, 0.3]), 1.0, (1.0, 1.2), 0.1)


@pytest.mark.slow
def test_delta_cache_halves_simulations_without_moving_the_optimum():
    space = BidSpace(0.5, 3.0, 0.5)
    profiles = ads([0.1, 0.3, 0.5, 0.2], [3.0, 3.0, 3.0, 3.0])
    model = ParametricTransition(space, [[0.6, 0.0, 0.0, 0.8, 0.3]] * 4)
    mech = Mechanism(1.0, 2, (1.0, 0.6), space.min_bid)
    sim_cfg = TrajectoryConfig(horizon=200, initial_bids=[1.0, 1.5, 2.0, 0.5], user_stream_pool=(20, 30, 40),
                               rng_seed=3)
    gp_cfg = GpConfig(population=10, generations=65, rng_seed=12)

    simulations = []

    def uncached(alpha):
        simulations.append(alpha)
        return simulate_trajectory(model, profiles, mech.with_alpha(alpha), sim_cfg, False).empirical_revenue

    reference = GeneticOptimizer(gp_cfg, uncached).run()
    assert reference.evaluations >= 500
    assert len(simulations) == reference.evaluations

    cache = DeltaCache(delta=0.01)
    cached = gp_optimize(model, profiles, mech, gp_cfg, sim_cfg, cache)
    assert cache.misses <= 0.5 * reference.evaluations
    assert abs(cached.best.alpha - reference.best.alpha) <= 0.05
