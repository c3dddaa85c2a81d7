# revenue_sim.py
"""Empirical revenue simulation under a candidate mechanism.

Bid trajectories are rolled forward with the learnt behavior model, fed by user
streams resampled from the training periods. The stationary oracle computes the
limit the empirical revenue converges to on small joint bid spaces.
"""
import bisect
import logging
import threading
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from advertiser_behavior import (DEFAULT_STATE_CAP, BehaviorModel, joint_bid_states,
                                 joint_transition_matrix, sample_next_bids)
from auction_core import (AdvertiserProfile, BidSpace, Mechanism, SeedLike, expected_period_revenue,
                          run_auction)
from exceptions import ConfigError, ErgodicityError, InvalidInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrajectoryConfig:
    horizon: int
    initial_bids: np.ndarray
    user_stream_pool: Tuple[int, ...]
    rng_seed: SeedLike = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}")
        if len(self.user_stream_pool) == 0:
            raise ConfigError("user stream pool is empty")
        if min(self.user_stream_pool) < 0:
            raise ConfigError("user counts must be nonnegative")
        object.__setattr__(self, 'initial_bids', np.asarray(self.initial_bids, dtype=float))
        object.__setattr__(self, 'user_stream_pool', tuple(int(u) for u in self.user_stream_pool))


@dataclass(frozen=True, eq=False)
class RevenueEstimate:
    alpha: float
    empirical_revenue: float
    per_period_series: np.ndarray
    cache_hit: bool = False
    source_alpha: Optional[float] = None
    bid_trajectory: Optional[np.ndarray] = None


def simulate_trajectory(model: BehaviorModel, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                        cfg: TrajectoryConfig, keep_trajectory: bool = True) -> RevenueEstimate:
    """R = mean period revenue over N periods of model-predicted bids"""
    if len(cfg.initial_bids) != len(profiles):
        raise InvalidInputError(f"{len(cfg.initial_bids)} initial bids for {len(profiles)} advertisers")

    rng = np.random.default_rng(cfg.rng_seed)
    pool = np.asarray(cfg.user_stream_pool)
    bids = model.bid_space.snap(cfg.initial_bids)
    revenues = np.empty(cfg.horizon)
    trajectory = np.empty((cfg.horizon, len(profiles))) if keep_trajectory else None

    for t in range(cfg.horizon):
        users = int(pool[rng.integers(len(pool))])
        outcome = run_auction(bids, profiles, mech, users, rng)
        revenues[t] = outcome.revenue
        if keep_trajectory:
            trajectory[t] = bids
        bids = sample_next_bids(model, bids, outcome.kpis, rng)

    return RevenueEstimate(alpha=mech.alpha, empirical_revenue=float(np.mean(revenues)),
                           per_period_series=revenues, source_alpha=mech.alpha,
                           bid_trajectory=trajectory)


class DeltaCache:
    """Reuses a stored estimate for any α within delta of an already simulated α.

    The nearest stored α wins, ties go to the smaller one. Lookups and inserts
    are atomic; two threads missing on the same α may both simulate.
    """

    def __init__(self, delta: float = 0.01):
        if delta < 0:
            raise ConfigError(f"delta must be nonnegative, got {delta}")
        self.delta = float(delta)
        self._alphas: List[float] = []
        self._entries: Dict[float, RevenueEstimate] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._alphas)

    def _nearest(self, alpha: float) -> Optional[float]:
        pos = bisect.bisect_left(self._alphas, alpha)
        best = None
        for candidate in self._alphas[max(pos - 1, 0):pos + 1]:
            if best is None or abs(candidate - alpha) < abs(best - alpha):
                best = candidate
        if best is not None and abs(best - alpha) <= self.delta:
            return best
        return None

    def lookup(self, alpha: float) -> Optional[RevenueEstimate]:
        with self._lock:
            neighbor = self._nearest(alpha)
            return self._entries[neighbor] if neighbor is not None else None

    def insert(self, alpha: float, estimate: RevenueEstimate):
        with self._lock:
            if alpha not in self._entries:
                bisect.insort(self._alphas, alpha)
                self._entries[alpha] = estimate

    def get_or_compute(self, alpha: float, compute: Callable[[], RevenueEstimate]) -> RevenueEstimate:
        with self._lock:
            neighbor = self._nearest(alpha)
            if neighbor is not None:
                self.hits += 1
                return replace(self._entries[neighbor], alpha=alpha, cache_hit=True,
                               source_alpha=neighbor)
            self.misses += 1
        estimate = compute()
        self.insert(alpha, estimate)
        return estimate

    def stats(self) -> Dict[str, float]:
        total = self.hits + self.misses
        return {'hits': self.hits, 'misses': self.misses, 'entries': len(self),
                'hit_rate': self.hits / total if total else 0.0}


def cached_empirical_revenue(cache: DeltaCache, model: BehaviorModel,
                             profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                             cfg: TrajectoryConfig) -> RevenueEstimate:
    return cache.get_or_compute(
        mech.alpha, lambda: simulate_trajectory(model, profiles, mech, cfg, keep_trajectory=False)
    )


def stationary_distribution(Q: np.ndarray, tol: float = 1e-10, max_iter: int = 1_000_000,
                            stall_window: int = 10_000) -> np.ndarray:
    """Power iteration π ← πQ from the first state until the L1 step is ≤ tol"""
    Q = np.asarray(Q, dtype=float)
    pi = np.zeros(Q.shape[0])
    pi[0] = 1.0
    best_residual = np.inf
    since_best = 0
    for iteration in range(max_iter):
        nxt = pi @ Q
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - pi).sum())
        pi = nxt
        if residual <= tol:
            logger.debug(f"Power iteration converged after {iteration + 1} steps")
            return pi
        if residual < best_residual:
            best_residual, since_best = residual, 0
        else:
            since_best += 1
            if since_best >= stall_window:
                break
    logger.error(f"Power iteration stalled at L1 residual {best_residual:.3e}")
    raise ErgodicityError(f"no stationary distribution reached (residual {best_residual:.3e})")


def state_revenues(bid_space: BidSpace, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                   user_count: float) -> np.ndarray:
    """Expected period revenue at every joint bid state"""
    return np.array([expected_period_revenue(bids, profiles, mech, user_count)
                     for bids in joint_bid_states(bid_space, len(profiles))])


def stationary_oracle(model: BehaviorModel, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                      user_count: int, num_user_samples: int = 100, rng_seed: SeedLike = 0,
                      tol: float = 1e-10, max_states: int = DEFAULT_STATE_CAP) -> float:
    """Σ_b π_{Q_f}(b) · E_U[revenue at b]: the limit of the empirical revenue"""
    Q = joint_transition_matrix(model, profiles, mech, user_count, num_user_samples, rng_seed,
                                max_states)
    if np.any(Q <= 0):
        logger.warning("Joint kernel has zero entries; convergence is not guaranteed")
    pi = stationary_distribution(Q, tol)
    return float(pi @ state_revenues(model.bid_space, profiles, mech, user_count))


def variance_diagnostic(model: BehaviorModel, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                        base_cfg: TrajectoryConfig, horizons: Sequence[int], replicates: int,
                        rng_seed: SeedLike = 0, n_jobs: int = 1) -> pd.DataFrame:
    """Sample variance of R across independent replicates, one row per horizon"""
    if replicates < 10:
        raise InvalidInputError(f"need at least 10 replicates, got {replicates}")
    seeds = np.random.SeedSequence(rng_seed).spawn(len(horizons) * replicates)

    rows = []
    for h, horizon in enumerate(horizons):
        configs = [replace(base_cfg, horizon=int(horizon), rng_seed=seeds[h * replicates + r])
                   for r in range(replicates)]
        estimates = Parallel(n_jobs=n_jobs)(
            delayed(simulate_trajectory)(model, profiles, mech, cfg, False) for cfg in configs
        )
        values = np.array([e.empirical_revenue for e in estimates])
        rows.append({'horizon': int(horizon), 'mean': float(values.mean()),
                     'variance': float(values.var(ddof=1))})
        logger.info(f"Horizon {horizon}: mean R {values.mean():.4f}, Var(R) {values.var(ddof=1):.3e}")
    return pd.DataFrame(rows)


def write_trajectory(estimate: RevenueEstimate, path: str):
    """One JSON line per period: t, bid vector, period revenue"""
    if estimate.bid_trajectory is None:
        raise InvalidInputError("estimate was simulated without keeping the trajectory")
    df = pd.DataFrame({
        't': np.arange(1, len(estimate.per_period_series) + 1),
        'bids': estimate.bid_trajectory.tolist(),
        'revenue': estimate.per_period_series,
    })
    df.to_json(path, orient='records', lines=True, double_precision=15)
    logger.info(f"Wrote {len(df)} trajectory records to {path}")
