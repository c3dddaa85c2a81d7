# mechanism_opt.py
"""Mechanism learning over the quality-score exponent α.

GeneticOptimizer searches α with empirical revenue as the fitness; dla_select
and wca_select are the directly-learnt and worst-case-analysis baselines.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from advertiser_behavior import BehaviorModel
from auction_core import (AdvertiserProfile, BidState, Mechanism, SeedLike, expected_period_revenue,
                          quality_scores)
from exceptions import ConfigError, DegenerateScoreError, InvalidInputError
from revenue_sim import DeltaCache, TrajectoryConfig, cached_empirical_revenue

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = tuple(round(0.1 * k, 1) for k in range(31))
FLAT_FITNESS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class GpConfig:
    population: int = 10
    generations: int = 50
    crossover_rate: float = 0.7
    mutation_rate: float = 0.2
    reproduction_rate: float = 0.1
    alpha_range: Tuple[float, float] = (0.0, 3.0)
    mutation_sigma: float = 0.1
    elitism: int = 1
    rng_seed: SeedLike = 0

    def __post_init__(self):
        rates = (self.crossover_rate, self.mutation_rate, self.reproduction_rate)
        if any(rate < 0 for rate in rates) or abs(sum(rates) - 1.0) > 1e-9:
            raise ConfigError(f"operator rates must be nonnegative and sum to 1, got {rates}")
        if self.population < 2 or self.generations < 1:
            raise ConfigError(f"need population >= 2 and generations >= 1, got "
                              f"{self.population} and {self.generations}")
        low, high = self.alpha_range
        if not high > low:
            raise ConfigError(f"alpha_range {self.alpha_range} is degenerate")
        if self.mutation_sigma < 0 or not 0 <= self.elitism < self.population:
            raise ConfigError("mutation_sigma must be >= 0 and elitism smaller than the population")


@dataclass
class Individual:
    alpha: float
    fitness: Optional[float] = None


@dataclass
class GpResult:
    best: Individual
    best_fitness_series: List[float] = field(default_factory=list)
    mean_fitness_series: List[float] = field(default_factory=list)
    best_alpha_series: List[float] = field(default_factory=list)
    evaluations: int = 0
    fitness_range: Tuple[float, float] = (0.0, 0.0)

    @property
    def flat_fitness(self) -> bool:
        low, high = self.fitness_range
        return high - low < FLAT_FITNESS_TOLERANCE

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'generation': np.arange(1, len(self.best_fitness_series) + 1),
            'best_fitness': self.best_fitness_series,
            'mean_fitness': self.mean_fitness_series,
            'best_alpha': self.best_alpha_series,
        })


class GeneticOptimizer:
    """Real-genome GP: blend crossover, clamped Gaussian mutation, reproduction,
    fitness-proportional selection and elitism"""

    def __init__(self, cfg: GpConfig, fitness_fn: Callable[[float], float], n_jobs: int = 1):
        self.cfg = cfg
        self.fitness_fn = fitness_fn
        self.n_jobs = n_jobs
        self.evaluations = 0

    def _evaluate(self, population: List[Individual]):
        pending = [ind for ind in population if ind.fitness is None]
        if self.n_jobs == 1:
            values = [self.fitness_fn(ind.alpha) for ind in pending]
        else:
            # threads share the δ-cache
            values = Parallel(n_jobs=self.n_jobs, prefer='threads')(
                delayed(self.fitness_fn)(ind.alpha) for ind in pending
            )
        for ind, value in zip(pending, values):
            ind.fitness = float(value)
        self.evaluations += len(pending)

    def _select(self, population: List[Individual], rng: np.random.Generator) -> Individual:
        fitness = np.array([ind.fitness for ind in population])
        weights = fitness - fitness.min()
        if weights.sum() <= 0:
            return population[rng.integers(len(population))]
        return population[rng.choice(len(population), p=weights / weights.sum())]

    def _breed(self, population: List[Individual], rng: np.random.Generator) -> List[Individual]:
        cfg = self.cfg
        low, high = cfg.alpha_range
        ranked = sorted(population, key=lambda ind: -ind.fitness)
        children = [Individual(ind.alpha, ind.fitness) for ind in ranked[:cfg.elitism]]

        operators = rng.choice(3, size=cfg.population - cfg.elitism,
                               p=[cfg.crossover_rate, cfg.mutation_rate, cfg.reproduction_rate])
        for op in operators:
            if op == 0:
                first, second = self._select(population, rng), self._select(population, rng)
                u = rng.random()
                children.append(Individual(first.alpha + u * (second.alpha - first.alpha)))
            elif op == 1:
                parent = self._select(population, rng)
                children.append(Individual(float(np.clip(parent.alpha + rng.normal(0.0, cfg.mutation_sigma),
                                                          low, high))))
            else:
                parent = self._select(population, rng)
                children.append(Individual(parent.alpha, parent.fitness))
        return children

    def run(self, initial: Optional[Sequence[float]] = None) -> GpResult:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.rng_seed)
        alphas = initial if initial is not None else rng.uniform(*cfg.alpha_range, size=cfg.population)
        population = [Individual(float(alpha)) for alpha in alphas]

        result = GpResult(best=Individual(float('nan'), -np.inf))
        low_fit, high_fit = np.inf, -np.inf
        for generation in range(cfg.generations):
            self._evaluate(population)
            fitness = np.array([ind.fitness for ind in population])
            leader = population[int(np.argmax(fitness))]
            if leader.fitness > result.best.fitness:
                result.best = Individual(leader.alpha, leader.fitness)
            low_fit, high_fit = min(low_fit, fitness.min()), max(high_fit, fitness.max())

            result.best_fitness_series.append(float(leader.fitness))
            result.mean_fitness_series.append(float(fitness.mean()))
            result.best_alpha_series.append(float(leader.alpha))
            logger.debug(f"Generation {generation + 1}: best α={leader.alpha:.4f} "
                         f"fitness={leader.fitness:.6f}")
            if generation < cfg.generations - 1:
                population = self._breed(population, rng)

        result.evaluations = self.evaluations
        result.fitness_range = (float(low_fit), float(high_fit))
        logger.info(f"GP finished: best α={result.best.alpha:.4f}, fitness={result.best.fitness:.6f}, "
                    f"{self.evaluations} evaluations")
        return result


def gp_optimize(model: BehaviorModel, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                cfg: GpConfig, sim_cfg: TrajectoryConfig, cache: DeltaCache,
                fitness_fn: Optional[Callable[[float], float]] = None, n_jobs: int = 1) -> GpResult:
    """Search α maximising δ-cached empirical revenue; fitness_fn overrides the simulation"""
    if fitness_fn is None:
        def fitness_fn(alpha: float) -> float:
            estimate = cached_empirical_revenue(cache, model, profiles, mech.with_alpha(alpha), sim_cfg)
            return estimate.empirical_revenue

    result = GeneticOptimizer(cfg, fitness_fn, n_jobs).run()
    stats = cache.stats()
    logger.info(f"δ-cache (delta={cache.delta}): {stats['hits']} hits, {stats['misses']} simulations")
    return result


def _argmax_first(grid: Sequence[float], values: Sequence[float]) -> float:
    """First grid point whose value beats all earlier ones beyond rounding noise"""
    best_alpha, best_value = grid[0], values[0]
    for alpha, value in zip(grid[1:], values[1:]):
        if value > best_value + 1e-12 * max(1.0, abs(best_value)):
            best_alpha, best_value = alpha, value
    return float(best_alpha)


def dla_revenues(historical_bids: Sequence[BidState], user_stream_pool: Sequence[int],
                 profiles: Sequence[AdvertiserProfile], alpha_grid: Sequence[float],
                 base_mech: Mechanism) -> np.ndarray:
    """Mean expected period revenue over the logged (fixed) bids, per grid α"""
    if len(historical_bids) == 0:
        raise InvalidInputError("historical bid sequence is empty")
    if len(alpha_grid) == 0:
        raise InvalidInputError("alpha grid is empty")
    if len(user_stream_pool) == 0:
        raise InvalidInputError("user stream pool is empty")
    revenues = []
    for alpha in alpha_grid:
        mech = base_mech.with_alpha(alpha)
        per_period = [expected_period_revenue(bids, profiles, mech, user_stream_pool[t % len(user_stream_pool)])
                      for t, bids in enumerate(historical_bids)]
        revenues.append(float(np.mean(per_period)))
    return np.array(revenues)


def dla_select(historical_bids: Sequence[BidState], user_stream_pool: Sequence[int],
               profiles: Sequence[AdvertiserProfile], alpha_grid: Sequence[float],
               base_mech: Mechanism) -> float:
    revenues = dla_revenues(historical_bids, user_stream_pool, profiles, alpha_grid, base_mech)
    alpha = _argmax_first(alpha_grid, revenues)
    logger.info(f"DLA selected α={alpha} (revenue {revenues.max():.6f} on fixed bids)")
    return alpha


def wca_revenue(profiles: Sequence[AdvertiserProfile], alpha: float,
                position_discounts: Sequence[float], closing_price: float) -> float:
    """Revenue Σ_j β_j·price_j at the lowest symmetric Nash equilibrium.

    Ads are ordered by f·v. Working upward from the bottom, the ad in slot j
    bids so that f_j·b_j·β_{j-1} = v_j·f_j·(β_{j-1} - β_j) + f_{j+1}·b_{j+1}·β_j,
    where the term below the last slot is the next ad (or the last ad itself)
    bidding the closing price.
    """
    discounts = np.asarray(position_discounts, dtype=float)
    if discounts.size == 0 or discounts[0] != 1.0 or np.any(np.diff(discounts) > 0) or np.any(discounts <= 0):
        raise InvalidInputError(f"position discounts must start at 1 and be non-increasing: {discounts.tolist()}")
    if len(profiles) == 0:
        raise InvalidInputError("profile list is empty")

    scores = quality_scores(profiles, Mechanism(alpha, len(discounts), tuple(discounts)))
    values = np.array([p.valuation for p in profiles])
    order = np.lexsort((np.arange(len(profiles)), -(scores * values)))
    shown = min(len(discounts), len(profiles))
    if np.any(scores[order[:shown]] <= 0):
        raise DegenerateScoreError(f"zero quality score among shown ads at α={alpha}")

    bottom = order[shown] if len(profiles) > shown else order[shown - 1]
    term_below = scores[bottom] * closing_price
    prices = np.zeros(shown)
    for j in range(shown - 1, 0, -1):
        ad = order[j]
        prices[j] = term_below / scores[ad]
        term_below = (values[ad] * scores[ad] * (discounts[j - 1] - discounts[j])
                      + term_below * discounts[j]) / discounts[j - 1]
    prices[0] = term_below / scores[order[0]]
    return float(np.sum(discounts[:shown] * prices))


def wca_select(profiles: Sequence[AdvertiserProfile], alpha_grid: Sequence[float],
               position_discounts: Sequence[float], closing_price: float) -> float:
    if len(alpha_grid) == 0:
        raise InvalidInputError("alpha grid is empty")
    revenues = [wca_revenue(profiles, alpha, position_discounts, closing_price) for alpha in alpha_grid]
    alpha = _argmax_first(alpha_grid, revenues)
    logger.info(f"WCA selected α={alpha} (equilibrium revenue {max(revenues):.6f})")
    return alpha


def write_optimizer_report(result: GpResult, path: str):
    result.history_frame().to_csv(path, sep='\t', index=False)
    logger.info(f"Optimizer report written to {path}")
