# advertiser_behavior.py
"""Markov model of advertiser bid updates.

Each advertiser moves from bid b^t to b^{t+1} with a probability that depends
only on b^t and the KPI report of period t. Two estimators are provided:
empirical frequencies over KPI buckets (TabularTransition) and a truncated
Gaussian kernel whose center is linear in (bid, kpi, 1) (ParametricTransition).
The joint kernel over bid vectors is the product of the per-advertiser rows.
"""
import itertools
import json
import logging
import warnings
from abc import ABC, abstractmethod
from dataclasses import astuple, dataclass
from functools import reduce
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.preprocessing import KBinsDiscretizer, StandardScaler

from auction_core import (AdvertiserProfile, BidSpace, BidState, KpiReport, Mechanism, SeedLike,
                          run_auction)
from exceptions import (DataError, InvalidInputError, StateSpaceTooLargeError, StepSizeError)

logger = logging.getLogger(__name__)

KPI_COLUMNS = ['impressions', 'clicks', 'avg_cpc']
TRANSITION_COLUMNS = ['advertiser_id', 'bid'] + KPI_COLUMNS + ['next_bid']
DEFAULT_STATE_CAP = 10_000


@dataclass(frozen=True)
class KpiBucket:
    impressions_bin: int = 0
    clicks_bin: int = 0
    cpc_bin: int = 0


class KpiBucketizer:
    """Maps a KPI report to per-signal quantile bins learnt on training data"""

    def __init__(self, bin_edges: Sequence[Sequence[float]]):
        if len(bin_edges) != len(KPI_COLUMNS):
            raise InvalidInputError(f"need bin edges for {KPI_COLUMNS}, got {len(bin_edges)}")
        self.bin_edges = [np.asarray(edges, dtype=float) for edges in bin_edges]

    @classmethod
    def single_bucket(cls) -> 'KpiBucketizer':
        return cls([[-np.inf, np.inf]] * len(KPI_COLUMNS))

    @classmethod
    def fit(cls, kpis: np.ndarray, n_bins: int = 3) -> 'KpiBucketizer':
        kpis = np.asarray(kpis, dtype=float)
        discretizer = KBinsDiscretizer(n_bins=n_bins, encode='ordinal', strategy='quantile',
                                       subsample=None)
        with warnings.catch_warnings():
            # constant or heavily tied signals collapse to fewer bins
            warnings.simplefilter('ignore', UserWarning)
            discretizer.fit(kpis)
        logger.info(f"KPI bins per signal: {discretizer.n_bins_.tolist()}")
        return cls(discretizer.bin_edges_)

    def bucket(self, kpi: KpiReport) -> KpiBucket:
        return KpiBucket(*self.bucket_array(np.atleast_2d(kpi.as_features()))[0])

    def bucket_array(self, kpis: np.ndarray) -> np.ndarray:
        kpis = np.atleast_2d(np.asarray(kpis, dtype=float))
        columns = []
        for j, edges in enumerate(self.bin_edges):
            bins = np.searchsorted(edges[1:-1], kpis[:, j], side='right')
            columns.append(np.clip(bins, 0, max(len(edges) - 2, 0)))
        return np.column_stack(columns).astype(int)


class BehaviorModel(ABC):
    kind = 'abstract'

    def __init__(self, bid_space: BidSpace, num_advertisers: int):
        self.bid_space = bid_space
        self.num_advertisers = int(num_advertisers)

    @abstractmethod
    def transition_row(self, i: int, current_bid: float, kpi: KpiReport) -> np.ndarray:
        """Distribution of advertiser i's next bid over the bid levels"""

    @abstractmethod
    def to_dict(self) -> dict:
        pass


class TabularTransition(BehaviorModel):
    kind = 'tabular'

    def __init__(self, bid_space: BidSpace, num_advertisers: int, bucketizer: KpiBucketizer,
                 matrices: Dict[Tuple[int, KpiBucket], np.ndarray], epsilon: float):
        super().__init__(bid_space, num_advertisers)
        self.bucketizer = bucketizer
        self.matrices = matrices
        self.epsilon = float(epsilon)
        self._uniform = np.full(bid_space.size, 1.0 / bid_space.size)

    def transition_row(self, i, current_bid, kpi):
        matrix = self.matrices.get((int(i), self.bucketizer.bucket(kpi)))
        if matrix is None:
            return self._uniform
        return matrix[self.bid_space.index_of(current_bid)]

    def to_dict(self):
        return {
            'kind': self.kind,
            'bid_space': self.bid_space.to_dict(),
            'num_advertisers': self.num_advertisers,
            'epsilon': self.epsilon,
            'bin_edges': [edges.tolist() for edges in self.bucketizer.bin_edges],
            'rows': [
                {'advertiser': i, 'bucket': [bucket.impressions_bin, bucket.clicks_bin, bucket.cpc_bin],
                 'matrix': matrix.tolist()}
                for (i, bucket), matrix in sorted(self.matrices.items(),
                                                  key=lambda item: (item[0][0], astuple(item[0][1])))
            ],
        }


class ParametricTransition(BehaviorModel):
    """Next bid ∝ exp(-(k - <w_i, z>)^2 / bandwidth^2) over the levels k,
    with z = (bid, impressions, clicks, avg_cpc, 1)."""
    kind = 'parametric'

    def __init__(self, bid_space: BidSpace, weights: np.ndarray, bandwidth: float = 1.0,
                 final_losses: Optional[Sequence[float]] = None):
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        super().__init__(bid_space, weights.shape[0])
        if weights.shape[1] != len(KPI_COLUMNS) + 2:
            raise InvalidInputError(f"weights must have {len(KPI_COLUMNS) + 2} columns")
        if bandwidth <= 0:
            raise InvalidInputError(f"bandwidth must be positive, got {bandwidth}")
        self.weights = weights
        self.bandwidth = float(bandwidth)
        self.final_losses = list(final_losses) if final_losses is not None else []

    def mean_bid(self, i: int, current_bid: float, kpi: KpiReport) -> float:
        z = np.array([current_bid, *kpi.as_features(), 1.0])
        return float(self.weights[i] @ z)

    def transition_row(self, i, current_bid, kpi):
        return gaussian_row(self.bid_space.levels, self.mean_bid(i, current_bid, kpi), self.bandwidth)

    def to_dict(self):
        return {
            'kind': self.kind,
            'bid_space': self.bid_space.to_dict(),
            'bandwidth': self.bandwidth,
            'weights': self.weights.tolist(),
            'final_losses': [float(loss) for loss in self.final_losses],
        }


def gaussian_row(levels: np.ndarray, mu: float, bandwidth: float = 1.0) -> np.ndarray:
    logits = -((levels - mu) / bandwidth) ** 2
    weights = np.exp(logits - logits.max())
    # far tails underflow; keep every level reachable
    weights = np.maximum(weights, np.finfo(float).tiny)
    return weights / weights.sum()


def transitions_from_log(log_df: pd.DataFrame) -> pd.DataFrame:
    """Turn per-period auction log records into (b^t, kpi^t, b^{t+1}) rows"""
    missing = {'t', 'advertiser_id', 'bid', *KPI_COLUMNS} - set(log_df.columns)
    if missing:
        raise DataError(f"auction log is missing columns {sorted(missing)}")

    df = log_df.sort_values(['advertiser_id', 't']).reset_index(drop=True)
    grouped = df.groupby('advertiser_id', sort=False)
    df['next_bid'] = grouped['bid'].shift(-1)
    df['next_t'] = grouped['t'].shift(-1)
    df = df[df['next_t'] == df['t'] + 1]
    return df[TRANSITION_COLUMNS].reset_index(drop=True)


def estimate_tabular(transitions: pd.DataFrame, bid_space: BidSpace, n_bins: int = 3,
                     epsilon: float = 1e-3, bucketizer: Optional[KpiBucketizer] = None,
                     num_advertisers: Optional[int] = None) -> TabularTransition:
    """Frequency estimate of M_{i,kpi}, ε-smoothed; unseen rows are uniform"""
    if epsilon < 0:
        raise InvalidInputError(f"epsilon must be nonnegative, got {epsilon}")
    if num_advertisers is None:
        num_advertisers = int(transitions['advertiser_id'].max()) + 1 if len(transitions) else 0
    if bucketizer is None:
        bucketizer = (KpiBucketizer.fit(transitions[KPI_COLUMNS].to_numpy(), n_bins)
                      if len(transitions) else KpiBucketizer.single_bucket())

    size = bid_space.size
    buckets = bucketizer.bucket_array(transitions[KPI_COLUMNS].to_numpy()) if len(transitions) else \
        np.zeros((0, len(KPI_COLUMNS)), dtype=int)
    from_idx = bid_space.index_of(transitions['bid'].to_numpy())
    to_idx = bid_space.index_of(transitions['next_bid'].to_numpy())
    advertisers = transitions['advertiser_id'].to_numpy().astype(int)

    counts: Dict[Tuple[int, KpiBucket], np.ndarray] = {}
    for adv, bucket, j, k in zip(advertisers, buckets, from_idx, to_idx):
        key = (int(adv), KpiBucket(*bucket.tolist()))
        if key not in counts:
            counts[key] = np.zeros((size, size))
        counts[key][j, k] += 1

    matrices = {}
    for key, count in counts.items():
        totals = count.sum(axis=1, keepdims=True)
        seen = totals[:, 0] > 0
        matrix = np.full((size, size), 1.0 / size)
        freq = count[seen] / totals[seen]
        matrix[seen] = (freq + epsilon / size) / (1.0 + epsilon)
        matrices[key] = matrix

    unseen = sorted(set(range(num_advertisers)) - {adv for adv, _ in counts})
    if unseen:
        logger.warning(f"No transitions logged for advertisers {unseen}; their rows stay uniform")
    logger.info(f"Estimated {len(matrices)} tabular transition matrices over {len(transitions)} observations")
    return TabularTransition(bid_space, num_advertisers, bucketizer, matrices, epsilon)


def fit_linear_gd(features: np.ndarray, targets: np.ndarray, learning_rate: float = 0.1,
                  iterations: int = 500) -> Tuple[np.ndarray, float]:
    """Least-squares fit of targets ≈ <w, (features, 1)> by gradient descent.

    Runs on standardized features and maps the weights back to raw units, so the
    returned vector ends with the intercept.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[0] != y.shape[0]:
        raise InvalidInputError(f"need at least 2 aligned observations, got {X.shape} and {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidInputError("features and targets must be finite")

    scaler = StandardScaler().fit(X)
    design = np.column_stack([scaler.transform(X), np.ones(len(y))])
    w = np.zeros(design.shape[1])
    n = len(y)

    loss = float(np.mean((design @ w - y) ** 2))
    increases = 0
    for step in range(iterations):
        residual = design @ w - y
        w -= learning_rate * (2.0 / n) * (design.T @ residual)
        new_loss = float(np.mean((design @ w - y) ** 2))
        increases = increases + 1 if new_loss > loss else 0
        loss = new_loss
        if increases >= 10:
            logger.error(f"Gradient descent diverging at step {step} (loss {loss:.3e})")
            raise StepSizeError(f"loss increased 10 consecutive steps with learning rate {learning_rate}")

    coef = w[:-1] / scaler.scale_
    intercept = w[-1] - float(coef @ scaler.mean_)
    return np.append(coef, intercept), loss


def fit_parametric(transitions: pd.DataFrame, bid_space: BidSpace, learning_rate: float = 0.1,
                   iterations: int = 500, bandwidth: float = 1.0,
                   num_advertisers: Optional[int] = None, n_jobs: int = 1) -> ParametricTransition:
    """Fit one weight vector per advertiser (independent fits, optionally in parallel)"""
    if num_advertisers is None:
        num_advertisers = int(transitions['advertiser_id'].max()) + 1
    groups = dict(tuple(transitions.groupby('advertiser_id')))
    missing = [i for i in range(num_advertisers) if i not in groups]
    if missing:
        raise InvalidInputError(f"no transitions for advertisers {missing}")

    feature_columns = ['bid'] + KPI_COLUMNS
    results = Parallel(n_jobs=n_jobs)(
        delayed(fit_linear_gd)(groups[i][feature_columns].to_numpy(), groups[i]['next_bid'].to_numpy(),
                               learning_rate, iterations)
        for i in range(num_advertisers)
    )
    weights = np.array([w for w, _ in results])
    losses = [loss for _, loss in results]
    logger.info(f"Fitted parametric behavior model for {num_advertisers} advertisers; "
                f"mean final loss {np.mean(losses):.4f}")
    return ParametricTransition(bid_space, weights, bandwidth, losses)


def transition_row(model: BehaviorModel, i: int, current_bid: float, kpi: KpiReport) -> np.ndarray:
    return model.transition_row(i, current_bid, kpi)


def sample_next_bids(model: BehaviorModel, current: BidState, kpis: Sequence[KpiReport],
                     rng_seed: SeedLike = None) -> BidState:
    """Each advertiser draws its next bid independently from its own row"""
    if len(current) != len(kpis):
        raise InvalidInputError(f"{len(current)} bids but {len(kpis)} KPI reports")
    rng = np.random.default_rng(rng_seed)
    draws = rng.random(len(current))
    size = model.bid_space.size
    next_idx = np.empty(len(current), dtype=int)
    for i, (bid, kpi) in enumerate(zip(current, kpis)):
        cdf = np.cumsum(model.transition_row(i, bid, kpi))
        next_idx[i] = min(np.searchsorted(cdf, draws[i] * cdf[-1], side='right'), size - 1)
    return model.bid_space.levels[next_idx]


def joint_bid_states(bid_space: BidSpace, num_advertisers: int) -> np.ndarray:
    """All bid vectors, first advertiser varying slowest"""
    levels = bid_space.levels
    return np.array(list(itertools.product(levels, repeat=num_advertisers)))


def _clicks_are_deterministic(profiles: Sequence[AdvertiserProfile], mech: Mechanism) -> bool:
    probs = np.outer([p.ctr for p in profiles], mech.position_discounts)
    return bool(np.all((probs == 0.0) | (probs == 1.0)))


def joint_transition_matrix(model: BehaviorModel, profiles: Sequence[AdvertiserProfile],
                            mech: Mechanism, user_count: int, num_user_samples: int = 100,
                            rng_seed: SeedLike = None,
                            max_states: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """Q_f = E_U Q_{U,f} over the joint bid space, averaged over sampled click streams"""
    m = len(profiles)
    num_states = model.bid_space.size ** m
    if num_states > max_states:
        logger.error(f"Joint bid space has {num_states} states (cap {max_states})")
        raise StateSpaceTooLargeError(f"{num_states} joint states exceed the cap of {max_states}")

    samples = 1 if _clicks_are_deterministic(profiles, mech) else max(int(num_user_samples), 1)
    rng = np.random.default_rng(rng_seed)
    states = joint_bid_states(model.bid_space, m)
    Q = np.zeros((num_states, num_states))
    for s, bids in enumerate(states):
        for _ in range(samples):
            outcome = run_auction(bids, profiles, mech, user_count, rng)
            rows = [model.transition_row(i, bids[i], outcome.kpis[i]) for i in range(m)]
            Q[s] += reduce(np.multiply.outer, rows).ravel()
        Q[s] /= samples
    return Q


def save_model(model: BehaviorModel, path: str):
    with open(path, 'w') as f:
        json.dump(model.to_dict(), f, indent=2)
    logger.info(f"Saved {model.kind} behavior model to {path}")


def load_model(path: str) -> BehaviorModel:
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Error loading behavior model from {path}: {e}")
        raise DataError(f"cannot read behavior model {path}: {e}") from e
    return model_from_dict(data)


def model_from_dict(data: dict) -> BehaviorModel:
    bid_space = BidSpace(**data['bid_space'])
    if data['kind'] == ParametricTransition.kind:
        return ParametricTransition(bid_space, np.array(data['weights']), data['bandwidth'],
                                    data.get('final_losses'))
    if data['kind'] == TabularTransition.kind:
        matrices = {
            (int(row['advertiser']), KpiBucket(*row['bucket'])): np.array(row['matrix'])
            for row in data['rows']
        }
        return TabularTransition(bid_space, data['num_advertisers'], KpiBucketizer(data['bin_edges']),
                                 matrices, data['epsilon'])
    raise DataError(f"unknown behavior model kind {data['kind']!r}")


def kpi_independent_model(bid_space: BidSpace, rows: List[np.ndarray]) -> TabularTransition:
    """Tabular model whose matrix for advertiser i ignores the KPI report"""
    single = KpiBucketizer.single_bucket()
    matrices = {(i, KpiBucket()): np.asarray(matrix, dtype=float) for i, matrix in enumerate(rows)}
    return TabularTransition(bid_space, len(rows), single, matrices, epsilon=0.0)
