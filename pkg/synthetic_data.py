# synthetic_data.py
import logging
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from agent_sandbox import AgentKind, run_population
from auction_core import AdvertiserProfile, BidSpace, SeedLike
from auction_logs import AuctionLogStore
from config import Scenario
from exceptions import InvalidInputError

logger = logging.getLogger(__name__)


def make_random_scenario(m: int, rng_seed: SeedLike = None, num_slots: int = 3,
                         bid_space: Optional[BidSpace] = None, users_per_period: float = 50.0,
                         discount_decay: float = 0.7,
                         agent_kinds: Optional[Sequence[AgentKind]] = None) -> Scenario:
    """Random advertisers whose initial bids never exceed their valuations"""
    if m < 1 or num_slots < 1:
        raise InvalidInputError(f"need m >= 1 and num_slots >= 1, got {m} and {num_slots}")
    if not 0 < discount_decay <= 1:
        raise InvalidInputError(f"discount_decay must lie in (0, 1], got {discount_decay}")
    rng = np.random.default_rng(rng_seed)
    bid_space = bid_space or BidSpace(min_bid=0.1, max_bid=3.0, unit=0.1)

    ctrs = rng.uniform(0.02, 0.2, size=m)
    valuations = bid_space.snap(rng.uniform(bid_space.min_bid, bid_space.max_bid, size=m))
    initial = bid_space.snap(rng.uniform(bid_space.min_bid, valuations))
    profiles = tuple(
        AdvertiserProfile(id=i, ctr=float(ctrs[i]), valuation=float(valuations[i]),
                          initial_bid=float(min(initial[i], valuations[i])))
        for i in range(m)
    )
    discounts = tuple(float(discount_decay ** j) for j in range(num_slots))
    return Scenario(bid_space=bid_space, position_discounts=discounts, profiles=profiles,
                    users_per_period=users_per_period,
                    agent_kinds=tuple(agent_kinds) if agent_kinds is not None else None)


def gen_synthetic(scenario: Scenario, periods: int, rng_seed: SeedLike = None,
                  store: Optional[AuctionLogStore] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Run the agent population under standard GSP (α=1) and log every period"""
    if periods < 1:
        raise InvalidInputError(f"periods must be at least 1, got {periods}")
    logger.info(f"Generating {periods} periods of auction logs for {scenario.num_advertisers} advertisers...")

    rng = np.random.default_rng(rng_seed)
    assignment = scenario.assignment(rng)
    user_counts = rng.poisson(scenario.users_per_period, size=periods)
    run = run_population(assignment, scenario.profiles, scenario.mechanism(1.0), scenario.bid_space,
                         user_counts, rng, scenario.initial_bids(), scenario.am_draws)

    log_df = run.to_log_frame()
    user_df = pd.DataFrame({'t': np.arange(1, periods + 1), 'user_count': user_counts.astype(np.int64)})
    counts = {kind.value: count for kind, count in assignment.counts().items()}
    logger.info(f"Agent mix {counts}; mean period revenue {run.revenues.mean():.4f}")

    if store is not None:
        store.write_auction_log(log_df)
        store.write_user_log(user_counts)
    return log_df, user_df
