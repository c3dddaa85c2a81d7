# auction_core.py
"""GSP auction mechanics: ranking by quality score times bid, second-price
payments, position-biased clicks, revenue and per-advertiser KPI."""
import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from exceptions import ConfigError, DegenerateScoreError, InvalidInputError

logger = logging.getLogger(__name__)

# A joint bid vector b^t, one entry per advertiser id.
BidState = np.ndarray
SeedLike = Union[None, int, np.random.Generator, np.random.SeedSequence]


@dataclass(frozen=True)
class BidSpace:
    """Finite bid grid {min_bid, min_bid + unit, ..., max_bid}"""
    min_bid: float
    max_bid: float
    unit: float

    def __post_init__(self):
        if self.unit <= 0 or self.min_bid < 0 or self.max_bid <= self.min_bid:
            raise ConfigError(
                f"Invalid bid space: min={self.min_bid}, max={self.max_bid}, unit={self.unit}"
            )

    @cached_property
    def size(self) -> int:
        return int(round((self.max_bid - self.min_bid) / self.unit)) + 1

    @cached_property
    def levels(self) -> np.ndarray:
        levels = self.min_bid + self.unit * np.arange(self.size)
        levels.setflags(write=False)
        return levels

    def index_of(self, bids) -> np.ndarray:
        """Index of the nearest level for each bid (clipped to the grid)"""
        idx = np.rint((np.asarray(bids, dtype=float) - self.min_bid) / self.unit)
        return np.clip(idx, 0, self.size - 1).astype(int)

    def snap(self, bids) -> np.ndarray:
        return self.levels[self.index_of(bids)]

    def to_dict(self) -> dict:
        return {'min_bid': self.min_bid, 'max_bid': self.max_bid, 'unit': self.unit}


@dataclass(frozen=True)
class AdvertiserProfile:
    id: int
    ctr: float
    valuation: float
    initial_bid: float

    def __post_init__(self):
        if not 0.0 <= self.ctr <= 1.0:
            raise InvalidInputError(f"Advertiser {self.id}: ctr {self.ctr} outside [0, 1]")
        if self.valuation < 0:
            raise InvalidInputError(f"Advertiser {self.id}: negative valuation {self.valuation}")


@dataclass(frozen=True)
class Mechanism:
    """GSP with quality score ctr**alpha.

    closing_price is what the lowest-ranked ad pays when nobody ranks below it
    (normally the bid space's min_bid).
    """
    alpha: float
    num_slots: int
    position_discounts: Tuple[float, ...]
    closing_price: float = 0.0

    def __post_init__(self):
        discounts = tuple(float(beta) for beta in self.position_discounts)
        object.__setattr__(self, 'position_discounts', discounts)
        if self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")
        if self.num_slots < 1 or len(discounts) != self.num_slots:
            raise ConfigError(
                f"num_slots={self.num_slots} does not match {len(discounts)} position discounts"
            )
        validate_position_discounts(discounts)

    def with_alpha(self, alpha: float) -> 'Mechanism':
        return replace(self, alpha=float(alpha))


def validate_position_discounts(discounts: Sequence[float]):
    """β_1 = 1, every β in (0, 1], non-increasing"""
    if not discounts or discounts[0] != 1.0:
        raise ConfigError(f"First position discount must be 1, got {list(discounts)}")
    if any(not 0.0 < beta <= 1.0 for beta in discounts):
        raise ConfigError(f"Position discounts must lie in (0, 1]: {list(discounts)}")
    if any(later > earlier for earlier, later in zip(discounts, discounts[1:])):
        raise ConfigError(f"Position discounts must be non-increasing: {list(discounts)}")


@dataclass(frozen=True)
class KpiReport:
    impressions: int = 0
    clicks: int = 0
    avg_cpc: float = 0.0

    def as_features(self) -> Tuple[float, float, float]:
        return float(self.impressions), float(self.clicks), float(self.avg_cpc)


@dataclass(frozen=True)
class AuctionOutcome:
    ranking: np.ndarray          # full permutation, best score first
    num_shown: int
    prices: np.ndarray           # price per shown slot
    clicks: np.ndarray           # click count per shown slot over the user stream
    revenue: float
    kpis: Tuple[KpiReport, ...]  # indexed by advertiser id
    user_count: int = 0

    @property
    def shown(self) -> np.ndarray:
        return self.ranking[:self.num_shown]

    def slot_of(self, advertiser_id: int) -> Optional[int]:
        hits = np.flatnonzero(self.shown == advertiser_id)
        return int(hits[0]) if hits.size else None


def quality_scores(profiles: Sequence[AdvertiserProfile], mech: Mechanism) -> np.ndarray:
    ctrs = np.array([p.ctr for p in profiles], dtype=float)
    return np.power(ctrs, mech.alpha)


def _check_inputs(bids, profiles):
    if len(profiles) == 0:
        logger.error("Auction called with no advertisers")
        raise InvalidInputError("profile list is empty")
    bids = np.asarray(bids, dtype=float)
    if bids.shape != (len(profiles),):
        raise InvalidInputError(f"expected {len(profiles)} bids, got shape {bids.shape}")
    return bids


def rank_by_scores(scores: np.ndarray, bids: np.ndarray) -> np.ndarray:
    """Descending score*bid; equal products go to the lower id"""
    ids = np.arange(len(bids))
    return np.lexsort((ids, -(scores * bids)))


def rank_ads(bids: BidState, profiles: Sequence[AdvertiserProfile], mech: Mechanism) -> np.ndarray:
    bids = _check_inputs(bids, profiles)
    return rank_by_scores(quality_scores(profiles, mech), bids)


def num_shown(profiles: Sequence[AdvertiserProfile], mech: Mechanism) -> int:
    return min(mech.num_slots, len(profiles))


def prices_from_scores(ranking: np.ndarray, scores: np.ndarray, bids: np.ndarray,
                       shown_count: int, closing_price: float) -> np.ndarray:
    """GSP price per shown slot: next score*bid over own score, closing price at the bottom"""
    shown = ranking[:shown_count]
    own_scores = scores[shown]
    if np.any(own_scores <= 0):
        zero_ids = shown[own_scores <= 0].tolist()
        logger.error(f"Zero quality score for shown advertisers {zero_ids}")
        raise DegenerateScoreError(f"advertisers {zero_ids} have zero quality score")

    below = ranking[1:shown_count + 1]
    prices = np.full(shown_count, float(closing_price))
    prices[:len(below)] = scores[below] * bids[below] / own_scores[:len(below)]
    return np.minimum(prices, bids[shown])


def gsp_prices(ranking: np.ndarray, bids: BidState, profiles: Sequence[AdvertiserProfile],
               mech: Mechanism) -> np.ndarray:
    bids = _check_inputs(bids, profiles)
    return prices_from_scores(np.asarray(ranking), quality_scores(profiles, mech), bids,
                              num_shown(profiles, mech), mech.closing_price)


def click_probabilities(ranking: np.ndarray, profiles: Sequence[AdvertiserProfile],
                        mech: Mechanism) -> np.ndarray:
    shown = np.asarray(ranking)[:num_shown(profiles, mech)]
    ctrs = np.array([profiles[i].ctr for i in shown], dtype=float)
    discounts = np.asarray(mech.position_discounts[:len(shown)])
    return np.clip(ctrs * discounts, 0.0, 1.0)


def simulate_clicks(ranking: np.ndarray, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                    rng_seed: SeedLike = None, user_count: int = 1) -> np.ndarray:
    """Independent click draws, shape (user_count, shown slots)"""
    rng = np.random.default_rng(rng_seed)
    probs = click_probabilities(ranking, profiles, mech)
    return rng.random((user_count, probs.size)) < probs


def run_auction(bids: BidState, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                user_count: int, rng_seed: SeedLike = None) -> AuctionOutcome:
    """One period: every user in the stream sees the same ranked slots"""
    bids = _check_inputs(bids, profiles)
    if user_count < 0:
        raise InvalidInputError(f"user_count must be nonnegative, got {user_count}")

    scores = quality_scores(profiles, mech)
    ranking = rank_by_scores(scores, bids)
    shown_count = num_shown(profiles, mech)
    prices = prices_from_scores(ranking, scores, bids, shown_count, mech.closing_price)

    if user_count > 0:
        clicks = simulate_clicks(ranking, profiles, mech, rng_seed, user_count).sum(axis=0)
    else:
        clicks = np.zeros(shown_count, dtype=int)
    revenue = float(np.sum(prices * clicks))

    kpis = [KpiReport()] * len(profiles)
    for slot, advertiser in enumerate(ranking[:shown_count]):
        slot_clicks = int(clicks[slot])
        paid = prices[slot] * slot_clicks
        kpis[advertiser] = KpiReport(
            impressions=int(user_count),
            clicks=slot_clicks,
            avg_cpc=float(paid / slot_clicks) if slot_clicks else 0.0,
        )

    return AuctionOutcome(ranking=ranking, num_shown=shown_count, prices=prices, clicks=clicks,
                          revenue=revenue, kpis=tuple(kpis), user_count=int(user_count))


def expected_period_revenue(bids: BidState, profiles: Sequence[AdvertiserProfile], mech: Mechanism,
                            user_count: float = 1.0) -> float:
    """Exact expected revenue of one period: users * Σ_j price_j * ctr * β_j"""
    bids = _check_inputs(bids, profiles)
    scores = quality_scores(profiles, mech)
    ranking = rank_by_scores(scores, bids)
    prices = prices_from_scores(ranking, scores, bids, num_shown(profiles, mech), mech.closing_price)
    return float(user_count * np.sum(prices * click_probabilities(ranking, profiles, mech)))


def advertiser_utility(i: int, outcome: AuctionOutcome, profiles: Sequence[AdvertiserProfile]) -> float:
    slot = outcome.slot_of(i)
    if slot is None:
        return 0.0
    return float((profiles[i].valuation - outcome.prices[slot]) * outcome.clicks[slot])


def profiles_from_records(records: Sequence[dict]) -> Tuple[AdvertiserProfile, ...]:
    """Build profiles from dict records, checking ids are 0..m-1"""
    profiles = tuple(
        AdvertiserProfile(id=int(r['id']), ctr=float(r['ctr']), valuation=float(r['valuation']),
                          initial_bid=float(r['initial_bid']))
        for r in sorted(records, key=lambda r: int(r['id']))
    )
    if [p.id for p in profiles] != list(range(len(profiles))):
        raise InvalidInputError("advertiser ids must be unique and contiguous from 0")
    return profiles
