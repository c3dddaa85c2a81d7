# agent_sandbox.py
"""Simulated advertiser populations.

BRM agents best-respond to the exact bids of everybody else, AM agents maximise
expected utility against a public distribution of competitor bids and counts,
SBM agents never move. A mixture assigns one of the three rules per advertiser.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from auction_core import (AdvertiserProfile, AuctionOutcome, BidSpace, BidState, KpiReport, Mechanism,
                          SeedLike, num_shown, quality_scores, rank_by_scores, run_auction)
from exceptions import InvalidInputError

logger = logging.getLogger(__name__)


class AgentKind(str, Enum):
    BRM = 'BRM'
    AM = 'AM'
    SBM = 'SBM'


MIXTURE_ORDER = (AgentKind.BRM, AgentKind.AM, AgentKind.SBM)


@dataclass(frozen=True)
class AnalyticalKnowledge:
    """Public knowledge of an AM agent: competitor bid and competitor count
    distributions; every competitor is assumed to have competitor_ctr."""
    bid_values: Tuple[float, ...]
    bid_probs: Tuple[float, ...]
    count_values: Tuple[int, ...]
    count_probs: Tuple[float, ...]
    competitor_ctr: float
    monte_carlo_draws: int = 200

    def __post_init__(self):
        for name, values, probs in (('bid', self.bid_values, self.bid_probs),
                                    ('count', self.count_values, self.count_probs)):
            probs = np.asarray(probs, dtype=float)
            if len(values) == 0 or len(values) != len(probs):
                raise InvalidInputError(f"{name} distribution needs matching values and probabilities")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise InvalidInputError(f"{name} distribution is not normalized: {probs.tolist()}")
        if min(self.count_values) < 0:
            raise InvalidInputError("competitor counts must be nonnegative")
        if self.monte_carlo_draws < 1:
            raise InvalidInputError(f"monte_carlo_draws must be >= 1, got {self.monte_carlo_draws}")

    @classmethod
    def from_bids(cls, competitor_bids: Sequence[float], competitor_ctrs: Sequence[float],
                  monte_carlo_draws: int = 200, fallback_bid: float = 0.0) -> 'AnalyticalKnowledge':
        """Empirical histogram of the given bids, competitor count fixed at their number"""
        competitor_bids = np.asarray(competitor_bids, dtype=float)
        if competitor_bids.size == 0:
            return cls((fallback_bid,), (1.0,), (0,), (1.0,), 1.0, monte_carlo_draws)
        values, counts = np.unique(competitor_bids, return_counts=True)
        return cls(tuple(values.tolist()), tuple((counts / counts.sum()).tolist()),
                   (int(competitor_bids.size),), (1.0,), float(np.mean(competitor_ctrs)),
                   monte_carlo_draws)


@dataclass(frozen=True)
class MixtureAssignment:
    proportions: Tuple[float, float, float]
    labels: Tuple[AgentKind, ...]

    def counts(self) -> Dict[AgentKind, int]:
        return {kind: sum(1 for label in self.labels if label == kind) for kind in MIXTURE_ORDER}

    @classmethod
    def uniform(cls, kind: AgentKind, m: int) -> 'MixtureAssignment':
        proportions = tuple(1.0 if k == kind else 0.0 for k in MIXTURE_ORDER)
        return cls(proportions, (kind,) * m)


def brm_slot_utilities(i: int, bids: BidState, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                       bid_space: BidSpace) -> Tuple[np.ndarray, np.ndarray]:
    """For every level i could bid (others fixed): the slot it lands in (-1 if
    unshown) and its expected utility (v_i - price) * ctr_i * β_slot"""
    bids = np.asarray(bids, dtype=float)
    scores = quality_scores(profiles, mech)
    levels = bid_space.levels
    own_score = scores[i]

    others = np.array([k for k in range(len(profiles)) if k != i], dtype=int)
    other_terms = scores[others] * bids[others]
    ordered = others[rank_by_scores(scores[others], bids[others])]
    ordered_terms = scores[ordered] * bids[ordered]

    own_terms = own_score * levels
    outranked_by = ((other_terms[None, :] > own_terms[:, None])
                    | ((other_terms[None, :] == own_terms[:, None]) & (others[None, :] < i)))
    positions = outranked_by.sum(axis=1)

    shown_count = num_shown(profiles, mech)
    slots = np.where(positions < shown_count, positions, -1)
    utilities = np.zeros(len(levels))
    if own_score <= 0:
        return np.full(len(levels), -1), utilities

    discounts = np.asarray(mech.position_discounts)
    profile = profiles[i]
    for idx, position in enumerate(positions):
        if position >= shown_count:
            continue
        if position < len(ordered):
            price = min(ordered_terms[position] / own_score, levels[idx])
        else:
            price = min(mech.closing_price, levels[idx])
        utilities[idx] = (profile.valuation - price) * profile.ctr * discounts[position]
    return slots, utilities


def brm_bid(i: int, bids: BidState, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
            bid_space: BidSpace) -> float:
    """Minimal best response: cheapest level reaching the utility-maximising slot
    (ties go to the higher slot); min_bid when no slot pays off"""
    slots, utilities = brm_slot_utilities(i, bids, profiles, mech, bid_space)
    best_slot, best_utility = None, 0.0
    for slot in sorted(set(slots[slots >= 0].tolist())):
        slot_utility = utilities[slots == slot].max()
        if slot_utility > best_utility:
            best_slot, best_utility = slot, slot_utility
    if best_slot is None:
        return float(bid_space.min_bid)
    return float(bid_space.levels[np.flatnonzero(slots == best_slot)[0]])


def am_expected_utilities(i: int, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                          knowledge: AnalyticalKnowledge, bid_space: BidSpace,
                          rng_seed: SeedLike = None) -> np.ndarray:
    """Monte-Carlo expected utility of every bid level; the same draws are
    shared by all levels and the agent wins score ties"""
    rng = np.random.default_rng(rng_seed)
    draws = knowledge.monte_carlo_draws
    levels = bid_space.levels
    own_score = quality_scores(profiles, mech)[i]
    if own_score <= 0:
        return np.zeros(len(levels))

    counts = rng.choice(np.asarray(knowledge.count_values), size=draws, p=knowledge.count_probs)
    width = int(counts.max())
    competitor_bids = rng.choice(np.asarray(knowledge.bid_values), size=(draws, width),
                                 p=knowledge.bid_probs)
    terms = (knowledge.competitor_ctr ** mech.alpha) * competitor_bids
    terms[np.arange(width)[None, :] >= counts[:, None]] = -np.inf
    terms = -np.sort(-terms, axis=1)
    padded = np.concatenate([terms, np.full((draws, 1), -np.inf)], axis=1)

    own_terms = own_score * levels
    positions = (terms[:, None, :] > own_terms[None, :, None]).sum(axis=2)
    below = np.take_along_axis(padded, positions, axis=1)
    prices = np.where(np.isfinite(below), below / own_score, mech.closing_price)
    prices = np.minimum(prices, levels[None, :])

    discounts = np.append(mech.position_discounts, 0.0)
    slot_discount = discounts[np.minimum(positions, mech.num_slots)]
    profile = profiles[i]
    utilities = (profile.valuation - prices) * profile.ctr * slot_discount
    return utilities.mean(axis=0)


def am_bid(i: int, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
           knowledge: AnalyticalKnowledge, bid_space: BidSpace, rng_seed: SeedLike = None) -> float:
    utilities = am_expected_utilities(i, profiles, mech, knowledge, bid_space, rng_seed)
    best = int(np.argmax(utilities))
    if utilities[best] <= 0:
        return float(bid_space.min_bid)
    return float(bid_space.levels[best])


def sbm_bid(i: int, current_bid: float) -> float:
    return current_bid


def assign_mixture(m: int, rng_seed: SeedLike = None,
                   proportions: Optional[Sequence[float]] = None) -> MixtureAssignment:
    """Dirichlet(1,1,1) proportions, largest-remainder counts, shuffled labels"""
    if m < 1:
        raise InvalidInputError(f"need at least one advertiser, got {m}")
    rng = np.random.default_rng(rng_seed)
    p = np.asarray(proportions if proportions is not None else rng.dirichlet(np.ones(3)), dtype=float)
    if p.shape != (3,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidInputError(f"mixture proportions must lie on the simplex: {p.tolist()}")

    raw = p * m
    counts = np.floor(raw).astype(int)
    leftover = m - counts.sum()
    counts[np.argsort(-(raw - counts), kind='stable')[:leftover]] += 1

    labels = [kind for kind, count in zip(MIXTURE_ORDER, counts) for _ in range(count)]
    labels = [labels[k] for k in rng.permutation(m)]
    return MixtureAssignment(tuple(p.tolist()), tuple(labels))


def step_population(assignment: MixtureAssignment, bids: BidState,
                    profiles: Sequence[AdvertiserProfile], mech: Mechanism, bid_space: BidSpace,
                    rng_seed: SeedLike = None, am_draws: int = 200) -> BidState:
    """Synchronous update: every agent reacts to the period-t bid vector"""
    bids = np.asarray(bids, dtype=float)
    if len(assignment.labels) != len(bids) or len(bids) != len(profiles):
        raise InvalidInputError("assignment, bids and profiles sizes differ")
    rng = np.random.default_rng(rng_seed)
    ctrs = np.array([p.ctr for p in profiles])

    next_bids = bids.copy()
    for i, kind in enumerate(assignment.labels):
        if kind == AgentKind.BRM:
            next_bids[i] = brm_bid(i, bids, profiles, mech, bid_space)
        elif kind == AgentKind.AM:
            knowledge = AnalyticalKnowledge.from_bids(np.delete(bids, i), np.delete(ctrs, i), am_draws,
                                                      fallback_bid=bid_space.min_bid)
            next_bids[i] = am_bid(i, profiles, mech, knowledge, bid_space, rng)
        else:
            next_bids[i] = sbm_bid(i, bids[i])
    return bid_space.snap(next_bids)


@dataclass
class SandboxRun:
    bid_history: np.ndarray          # (periods, m): bids in force each period
    revenues: np.ndarray             # (periods,)
    kpis: List[Tuple[KpiReport, ...]] = field(default_factory=list)

    def to_log_frame(self) -> pd.DataFrame:
        """Auction log records, one per (period, advertiser), periods from 1"""
        records = []
        for t, (bids, period_kpis) in enumerate(zip(self.bid_history, self.kpis), start=1):
            for advertiser, (bid, kpi) in enumerate(zip(bids, period_kpis)):
                records.append({'t': t, 'advertiser_id': advertiser, 'bid': float(bid),
                                'impressions': kpi.impressions, 'clicks': kpi.clicks,
                                'avg_cpc': kpi.avg_cpc})
        return pd.DataFrame(records, columns=['t', 'advertiser_id', 'bid', 'impressions', 'clicks',
                                              'avg_cpc'])


def run_population(assignment: MixtureAssignment, profiles: Sequence[AdvertiserProfile],
                   mech: Mechanism, bid_space: BidSpace, user_counts: Sequence[int],
                   rng_seed: SeedLike = None, initial_bids: Optional[BidState] = None,
                   am_draws: int = 200) -> SandboxRun:
    """Run one auction per period, then let every agent update its bid"""
    rng = np.random.default_rng(rng_seed)
    bids = bid_space.snap(initial_bids if initial_bids is not None
                          else [p.initial_bid for p in profiles])
    periods = len(user_counts)
    run = SandboxRun(bid_history=np.empty((periods, len(profiles))), revenues=np.empty(periods))

    for t, users in enumerate(user_counts):
        outcome: AuctionOutcome = run_auction(bids, profiles, mech, int(users), rng)
        run.bid_history[t] = bids
        run.revenues[t] = outcome.revenue
        run.kpis.append(outcome.kpis)
        bids = step_population(assignment, bids, profiles, mech, bid_space, rng, am_draws)
    return run
