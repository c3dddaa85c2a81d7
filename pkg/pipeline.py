# pipeline.py
"""End-to-end orchestration: behavior learning, revenue simulation and
mechanism learning on logged data, then a head-to-head evaluation of the
learnt α against the GSP, WCA and DLA baselines."""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from advertiser_behavior import (BehaviorModel, estimate_tabular, fit_parametric, save_model,
                                 transitions_from_log)
from agent_sandbox import run_population
from auction_logs import AuctionLogStore
from config import ExperimentConfig, Scenario
from exceptions import DataError, InvalidInputError
from mechanism_opt import GpResult, dla_select, gp_optimize, wca_select, write_optimizer_report
from revenue_sim import DeltaCache, TrajectoryConfig

logger = logging.getLogger(__name__)

BEHAVIOR_MODEL_FILE = 'behavior_model.json'
OPTIMIZER_REPORT_FILE = 'optimizer_report.tsv'
BOA_RESULT_FILE = 'boa_result.json'
COMPARISON_FILE = 'revenue_comparison.tsv'
PAIRED_SUMMARY_FILE = 'paired_summary.tsv'
REPLICATE_REVENUE_FILE = 'replicate_revenue.tsv'
COMPARISON_FIGURE_FILE = 'revenue_comparison.png'
SIGNIFICANCE_LEVEL = 0.05

LabeledAlphas = Union[Mapping[str, float], Sequence[Tuple[str, float]]]


@dataclass
class BoaResult:
    alpha: float
    fitness: float
    flat_fitness: bool
    evaluations: int
    cache_stats: Dict[str, float]
    gp: GpResult
    model: BehaviorModel

    def to_dict(self) -> dict:
        return {'alpha': self.alpha, 'fitness': self.fitness, 'flat_fitness': self.flat_fitness,
                'evaluations': self.evaluations, 'cache': self.cache_stats,
                'behavior_model': self.model.kind}


@dataclass
class EvaluationResult:
    labels: List[str]
    alphas: Dict[str, float]
    cumulative: pd.DataFrame          # period + one cumulative-average column per label
    replicate_revenue: pd.DataFrame   # replicate, label, mean_revenue
    summary: pd.DataFrame             # paired comparisons against the reference label
    period_revenue: Dict[str, np.ndarray] = field(default_factory=dict)  # (replicates, periods)


def training_log(config: ExperimentConfig, log_df: pd.DataFrame) -> pd.DataFrame:
    train = log_df[log_df['t'] <= config.train_periods]
    if train['t'].nunique() < 2:
        raise DataError("need at least two logged training periods")
    return train


def learn_behavior_model(config: ExperimentConfig, log_df: pd.DataFrame, scenario: Scenario) -> BehaviorModel:
    """Fit the advertiser behavior model on the training periods"""
    transitions = transitions_from_log(training_log(config, log_df))
    settings = config.behavior
    if settings['kind'] == 'tabular':
        model = estimate_tabular(transitions, scenario.bid_space, n_bins=settings['n_bins'],
                                 epsilon=settings['epsilon'], num_advertisers=scenario.num_advertisers)
    else:
        model = fit_parametric(transitions, scenario.bid_space, learning_rate=settings['learning_rate'],
                               iterations=settings['iterations'], bandwidth=settings['bandwidth'],
                               num_advertisers=scenario.num_advertisers, n_jobs=config.n_jobs)
    return model


def first_period_bids(log_df: pd.DataFrame, num_advertisers: int) -> np.ndarray:
    first = log_df[log_df['t'] == 1].sort_values('advertiser_id')
    if len(first) != num_advertisers:
        raise DataError(f"period 1 has {len(first)} records for {num_advertisers} advertisers")
    return first['bid'].to_numpy(dtype=float)


def run_boa(config: ExperimentConfig, fitness_fn: Optional[Callable[[float], float]] = None,
            scenario: Optional[Scenario] = None) -> BoaResult:
    """Learn behavior, simulate revenue with the δ-cache and search α with the GP.

    fitness_fn replaces the simulated revenue, leaving the rest of the pipeline intact.
    """
    scenario = scenario or config.load_scenario()
    store = AuctionLogStore(config.data_dir)
    if not store.exists():
        raise DataError(f"no auction and user logs in {config.data_dir}; run gen first")
    log_df = store.read_auction_log()
    if log_df['advertiser_id'].nunique() != scenario.num_advertisers:
        raise DataError(f"log covers {log_df['advertiser_id'].nunique()} advertisers, "
                        f"scenario has {scenario.num_advertisers}")

    model = learn_behavior_model(config, log_df, scenario)
    os.makedirs(config.output_dir, exist_ok=True)
    save_model(model, config.path(BEHAVIOR_MODEL_FILE))

    sim_cfg = TrajectoryConfig(horizon=config.horizon,
                               initial_bids=first_period_bids(log_df, scenario.num_advertisers),
                               user_stream_pool=store.user_pool(config.train_periods),
                               rng_seed=config.seeds['ers'])
    cache = DeltaCache(config.delta)
    gp = gp_optimize(model, scenario.profiles, scenario.mechanism(), config.gp, sim_cfg, cache,
                     fitness_fn=fitness_fn, n_jobs=config.n_jobs)
    if gp.flat_fitness:
        logger.warning(f"Fitness is flat across α (range {gp.fitness_range}); any α is optimal")

    result = BoaResult(alpha=gp.best.alpha, fitness=gp.best.fitness, flat_fitness=gp.flat_fitness,
                       evaluations=gp.evaluations, cache_stats=cache.stats(), gp=gp, model=model)
    write_optimizer_report(gp, config.path(OPTIMIZER_REPORT_FILE))
    with open(config.path(BOA_RESULT_FILE), 'w') as f:
        json.dump(result.to_dict(), f, indent=2)
    logger.info(f"BOA selected α={result.alpha:.4f} (empirical revenue {result.fitness:.4f})")
    return result


def load_boa_alpha(config: ExperimentConfig) -> float:
    try:
        with open(config.path(BOA_RESULT_FILE), 'r') as f:
            return float(json.load(f)['alpha'])
    except (OSError, KeyError, ValueError) as e:
        logger.error(f"Error reading {config.path(BOA_RESULT_FILE)}: {e}")
        raise DataError(f"no usable BOA result in {config.output_dir}; run optimize first") from e


def select_baselines(config: ExperimentConfig, scenario: Scenario, log_df: pd.DataFrame,
                     user_df: pd.DataFrame) -> Dict[str, float]:
    """GSP (α=1), WCA on the profiles, DLA on the logged training bids"""
    train = training_log(config, log_df)
    historical = train.pivot(index='t', columns='advertiser_id', values='bid').sort_index().to_numpy()
    users = user_df[user_df['t'] <= config.train_periods].sort_values('t')['user_count'].tolist()
    if not users:
        raise DataError("user log has no training periods")
    grid = config.alpha_grid
    return {
        'GSP': 1.0,
        'WCA': wca_select(scenario.profiles, grid, scenario.position_discounts, scenario.bid_space.min_bid),
        'DLA': dla_select(list(historical), users, scenario.profiles, grid, scenario.mechanism()),
    }


def _run_replicate(scenario: Scenario, labeled: List[Tuple[str, float]], periods: int,
                   seed: np.random.SeedSequence) -> Dict[str, np.ndarray]:
    """Same agent mix, user streams and random draws for every label"""
    assignment_seed, users_seed, sandbox_seed = seed.spawn(3)
    assignment = scenario.assignment(assignment_seed)
    user_counts = np.random.default_rng(users_seed).poisson(scenario.users_per_period, size=periods)
    revenues = {}
    for label, alpha in labeled:
        run = run_population(assignment, scenario.profiles, scenario.mechanism(alpha), scenario.bid_space,
                             user_counts, np.random.default_rng(sandbox_seed), scenario.initial_bids(),
                             scenario.am_draws)
        revenues[label] = run.revenues
    return revenues


def paired_summary(replicate_means: Dict[str, np.ndarray], reference: str) -> pd.DataFrame:
    """Paired differences reference − other across replicates, with a one-sided sign test"""
    rows = []
    for label, means in replicate_means.items():
        if label == reference:
            continue
        diffs = replicate_means[reference] - means
        wins, losses = int((diffs > 0).sum()), int((diffs < 0).sum())
        p_value = stats.binomtest(wins, wins + losses, 0.5, alternative='greater').pvalue \
            if wins + losses else 1.0
        rows.append({'reference': reference, 'other': label, 'mean_diff': float(diffs.mean()),
                     'median_diff': float(np.median(diffs)), 'wins': wins, 'losses': losses,
                     'ties': len(diffs) - wins - losses, 'p_value': float(p_value),
                     'significant': bool(p_value < SIGNIFICANCE_LEVEL)})
    return pd.DataFrame(rows, columns=['reference', 'other', 'mean_diff', 'median_diff', 'wins', 'losses',
                                       'ties', 'p_value', 'significant'])


def evaluate_mechanisms(config: ExperimentConfig, alphas: LabeledAlphas,
                        scenario: Optional[Scenario] = None) -> EvaluationResult:
    """Replay the test horizon under each labeled α with agents reacting to it"""
    labeled = [(str(label), float(alpha)) for label, alpha in
               (alphas.items() if isinstance(alphas, Mapping) else alphas)]
    labels = [label for label, _ in labeled]
    if not labeled:
        raise InvalidInputError("no mechanisms to evaluate")
    if len(set(labels)) != len(labels):
        raise InvalidInputError(f"duplicate mechanism labels in {labels}")
    scenario = scenario or config.load_scenario()
    periods = config.test_periods

    seeds = np.random.SeedSequence(config.seeds['evaluate']).spawn(config.mixture_seeds)
    logger.info(f"Evaluating {labels} over {len(seeds)} mixture seeds, {periods} periods each")
    replicates = Parallel(n_jobs=config.n_jobs)(
        delayed(_run_replicate)(scenario, labeled, periods, seed) for seed in seeds
    )

    period_revenue = {label: np.vstack([rep[label] for rep in replicates]) for label in labels}
    steps = np.arange(1, periods + 1)
    cumulative = pd.DataFrame({'period': steps})
    for label in labels:
        cumulative[label] = np.cumsum(period_revenue[label].mean(axis=0)) / steps

    replicate_means = {label: period_revenue[label].sum(axis=1) / periods for label in labels}
    replicate_revenue = pd.DataFrame([
        {'replicate': r, 'label': label, 'mean_revenue': float(replicate_means[label][r])}
        for r in range(len(seeds)) for label in labels
    ])
    reference = 'BOA' if 'BOA' in labels else labels[0]
    summary = paired_summary(replicate_means, reference)

    for label in labels:
        logger.info(f"{label} (α={dict(labeled)[label]:.3f}): mean revenue {replicate_means[label].mean():.4f}")
    return EvaluationResult(labels=labels, alphas=dict(labeled), cumulative=cumulative,
                            replicate_revenue=replicate_revenue, summary=summary,
                            period_revenue=period_revenue)


def write_evaluation(result: EvaluationResult, output_dir: str):
    os.makedirs(output_dir, exist_ok=True)
    result.cumulative.to_csv(os.path.join(output_dir, COMPARISON_FILE), sep='\t', index=False)
    result.summary.to_csv(os.path.join(output_dir, PAIRED_SUMMARY_FILE), sep='\t', index=False)
    result.replicate_revenue.to_csv(os.path.join(output_dir, REPLICATE_REVENUE_FILE), sep='\t', index=False)
    logger.info(f"Comparison tables written to {output_dir}")


def plot_revenue_comparison(table: pd.DataFrame, path: str, alphas: Optional[Mapping[str, float]] = None):
    """Cumulative-average revenue per period, one line per mechanism"""
    fig, ax = plt.subplots(figsize=(8, 5))
    for label in table.columns.drop('period'):
        name = f"{label} (α={alphas[label]:.2f})" if alphas and label in alphas else label
        ax.plot(table['period'], table[label], label=name)
    ax.set_xlabel('period')
    ax.set_ylabel('cumulative average revenue')
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"Revenue comparison figure saved to {path}")
