# test_auction_core.py
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from auction_core import (AdvertiserProfile, BidSpace, KpiReport, Mechanism, advertiser_utility,
                          expected_period_revenue, gsp_prices, prices_from_scores, rank_ads, rank_by_scores,
                          run_auction, simulate_clicks)
from exceptions import ConfigError, DegenerateScoreError, InvalidInputError


def make_profiles(ctrs, valuations=None):
    valuations = valuations or [10.0] * len(ctrs)
    return [AdvertiserProfile(i, ctr, v, 1.0) for i, (ctr, v) in enumerate(zip(ctrs, valuations))]


def make_mech(alpha=1.0, discounts=(1.0, 1.0), closing_price=0.5):
    return Mechanism(alpha, len(discounts), tuple(discounts), closing_price)


WORKED_PROFILES = make_profiles([0.4, 0.2, 0.1])
WORKED_BIDS = np.array([5.0, 8.0, 10.0])


def test_rank_by_score_times_bid():
    """Scores 2.0, 1.6, 1.0 keep the id order"""
    assert rank_ads(WORKED_BIDS, WORKED_PROFILES, make_mech()).tolist() == [0, 1, 2]


def test_rank_single_ad():
    assert rank_ads([3.0], make_profiles([0.5]), make_mech(discounts=(1.0,))).tolist() == [0]


def test_rank_ties_go_to_lower_id():
    profiles = make_profiles([0.2, 0.4])
    assert rank_ads([4.0, 2.0], profiles, make_mech()).tolist() == [0, 1]
    assert rank_by_scores(np.array([0.4, 0.2]), np.array([2.0, 4.0])).tolist() == [0, 1]


def test_rank_empty_profiles():
    with pytest.raises(InvalidInputError):
        rank_ads([], [], make_mech())


def test_gsp_prices_worked_example():
    ranking = rank_ads(WORKED_BIDS, WORKED_PROFILES, make_mech())
    prices = gsp_prices(ranking, WORKED_BIDS, WORKED_PROFILES, make_mech())
    assert np.allclose(prices, [4.0, 5.0])


def test_single_shown_ad_pays_closing_price():
    profiles = make_profiles([0.3])
    mech = make_mech(discounts=(1.0,), closing_price=0.25)
    assert gsp_prices(np.array([0]), [2.0], profiles, mech).tolist() == [0.25]


def test_bottom_ad_pays_closing_price_when_nobody_ranks_below():
    profiles = make_profiles([0.4, 0.2])
    mech = make_mech(closing_price=0.5)
    prices = gsp_prices(np.array([0, 1]), [5.0, 8.0], profiles, mech)
    assert np.allclose(prices, [0.2 * 8.0 / 0.4, 0.5])


def test_zero_quality_score_in_shown_slot():
    profiles = make_profiles([0.4, 0.0])
    with pytest.raises(DegenerateScoreError):
        gsp_prices(np.array([0, 1]), [5.0, 8.0], profiles, make_mech())


@pytest.mark.parametrize("scale", [4.0, 0.5])
def test_prices_invariant_to_power_of_two_score_scale(scale):
    scores = np.array([0.4, 0.2, 0.1])
    ranking = rank_by_scores(scores, WORKED_BIDS)
    scaled_ranking = rank_by_scores(scores * scale, WORKED_BIDS)
    assert scaled_ranking.tolist() == ranking.tolist()
    assert np.array_equal(prices_from_scores(ranking, scores, WORKED_BIDS, 2, 0.5),
                          prices_from_scores(scaled_ranking, scores * scale, WORKED_BIDS, 2, 0.5))


def test_prices_invariant_to_score_scale_of_ten():
    scores = np.array([0.4, 0.2, 0.1])
    ranking = rank_by_scores(scores, WORKED_BIDS)
    assert np.allclose(prices_from_scores(ranking, scores, WORKED_BIDS, 2, 0.5),
                       prices_from_scores(ranking, scores * 10, WORKED_BIDS, 2, 0.5))


def test_randomized_auction_invariants():
    rng = np.random.default_rng(7)
    space = BidSpace(0.1, 5.0, 0.1)
    for _ in range(10_000):
        m = int(rng.integers(1, 7))
        profiles = make_profiles(rng.uniform(0.01, 1.0, m).tolist())
        mech = make_mech(alpha=float(rng.uniform(0, 3)), discounts=(1.0, 0.7, 0.5),
                         closing_price=space.min_bid)
        bids = space.snap(rng.uniform(0.1, 5.0, m))
        outcome = run_auction(bids, profiles, mech, int(rng.integers(0, 30)), rng)
        shown = outcome.shown

        assert np.all(outcome.prices <= bids[shown])
        assert np.all(outcome.prices >= 0)

        paid = sum(kpi.clicks * kpi.avg_cpc for kpi in outcome.kpis)
        assert outcome.revenue == pytest.approx(float(np.sum(outcome.prices * outcome.clicks)), abs=1e-12)
        assert outcome.revenue == pytest.approx(paid, abs=1e-9)
        assert outcome.revenue >= 0

        scores = np.power([p.ctr for p in profiles], mech.alpha)
        scaled = scores * rng.uniform(0.1, 10.0)
        scaled_ranking = rank_by_scores(scaled, bids)
        assert scaled_ranking.tolist() == outcome.ranking.tolist()
        scaled_prices = prices_from_scores(scaled_ranking, scaled, bids, len(shown), mech.closing_price)
        assert np.allclose(scaled_prices, outcome.prices, rtol=1e-12, atol=0.0)


def test_equal_ctrs_rank_by_bid_for_any_alpha():
    profiles = make_profiles([0.3, 0.3, 0.3])
    bids = np.array([1.0, 3.0, 2.0])
    for alpha in (0.0, 0.5, 1.0, 2.7):
        assert rank_ads(bids, profiles, make_mech(alpha=alpha)).tolist() == [1, 2, 0]


def test_clicks_with_certain_and_zero_ctr():
    profiles = make_profiles([1.0, 0.0])
    mech = make_mech(discounts=(1.0, 1.0))
    clicks = simulate_clicks(np.array([0, 1]), profiles, mech, rng_seed=3, user_count=50)
    assert clicks[:, 0].all()
    assert not clicks[:, 1].any()


def test_click_rate_matches_ctr_times_discount():
    profiles = make_profiles([0.9, 0.5])
    mech = make_mech(discounts=(1.0, 0.5))
    clicks = simulate_clicks(np.array([0, 1]), profiles, mech, rng_seed=11, user_count=100_000)
    assert abs(clicks[:, 1].mean() - 0.25) < 0.01


def test_run_auction_without_users():
    outcome = run_auction(WORKED_BIDS, WORKED_PROFILES, make_mech(), 0, rng_seed=1)
    assert outcome.revenue == 0.0
    assert all(kpi == KpiReport() for kpi in outcome.kpis)


def test_run_auction_deterministic_clicks_revenue():
    profiles = make_profiles([1.0, 1.0, 1.0])
    bids = np.array([5.0, 4.0, 5.0])
    # ranking 0, 2, 1 by bid then id: prices 5.0 and 4.0
    outcome = run_auction(bids, profiles, make_mech(), 3, rng_seed=0)
    assert outcome.ranking[:2].tolist() == [0, 2]
    assert np.allclose(outcome.prices, [5.0, 4.0])
    assert outcome.revenue == pytest.approx(27.0)
    assert outcome.kpis[0] == KpiReport(3, 3, 5.0)
    assert outcome.kpis[1] == KpiReport()


def test_run_auction_revenue_accounting():
    profiles = make_profiles([0.3, 0.5, 0.2, 0.6])
    outcome = run_auction([1.0, 2.0, 3.0, 0.5], profiles, make_mech(discounts=(1.0, 0.8)), 200, rng_seed=5)
    paid = sum(kpi.clicks * kpi.avg_cpc for kpi in outcome.kpis)
    assert outcome.revenue == pytest.approx(paid)
    assert all(kpi.clicks <= kpi.impressions for kpi in outcome.kpis)


def test_run_auction_same_seed_same_outcome():
    profiles = make_profiles([0.3, 0.5, 0.2])
    first = run_auction([1.0, 2.0, 3.0], profiles, make_mech(), 100, rng_seed=42)
    second = run_auction([1.0, 2.0, 3.0], profiles, make_mech(), 100, rng_seed=42)
    assert np.array_equal(first.clicks, second.clicks)
    assert first.kpis == second.kpis
    assert first.revenue == second.revenue


def test_advertiser_utility():
    profiles = make_profiles([1.0, 1.0, 1.0], valuations=[10.0, 8.0, 4.0])
    mech = make_mech(discounts=(1.0, 1.0), closing_price=0.5)
    outcome = run_auction([5.0, 4.0, 3.0], profiles, mech, 1, rng_seed=0)
    assert advertiser_utility(0, outcome, profiles) == pytest.approx(10.0 - 4.0)
    assert advertiser_utility(1, outcome, profiles) == pytest.approx(8.0 - 3.0)
    assert advertiser_utility(2, outcome, profiles) == 0.0


def test_utility_zero_when_valuation_equals_price():
    profiles = make_profiles([1.0, 1.0], valuations=[4.0, 4.0])
    outcome = run_auction([5.0, 4.0], profiles, make_mech(discounts=(1.0,)), 7, rng_seed=0)
    assert advertiser_utility(0, outcome, profiles) == 0.0


def test_expected_revenue_matches_click_probabilities():
    profiles = make_profiles([0.4, 0.2, 0.1])
    mech = make_mech(discounts=(1.0, 0.5))
    expected = 10 * (4.0 * 0.4 * 1.0 + 5.0 * 0.2 * 0.5)
    assert expected_period_revenue(WORKED_BIDS, profiles, mech, 10) == pytest.approx(expected)


def test_bid_space_levels_and_snap():
    space = BidSpace(0.1, 0.5, 0.1)
    assert space.size == 5
    assert space.snap([0.26, 0.0, 9.0]).tolist() == [space.levels[2], space.levels[0], space.levels[4]]


@pytest.mark.parametrize("discounts", [(0.9, 0.5), (1.0, 1.2), (1.0, 0.5, 0.7), (1.0, 0.0)])
def test_invalid_position_discounts(discounts):
    with pytest.raises(ConfigError):
        Mechanism(1.0, len(discounts), discounts)


def test_invalid_profile():
    with pytest.raises(InvalidInputError):
        AdvertiserProfile(0, 1.5, 1.0, 1.0)
