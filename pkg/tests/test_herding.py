import numpy as np
import pytest

from memberflow import herding as H
from memberflow.behavior import classified_profiles
from memberflow.stats import ZeroVariance, pearson
from conftest import make_panel, rng
from oracles import binom_pmf_exact, herding_rule, null_herding_rate_enumerated

# exact enumeration over k in 0..40 of C(40,k)/2^40 where the pmf is <= 0.05
NULL_RATE_40 = 0.1538599441628321


def test_binom_pmf_values():
    assert H.binom_pmf(0, 10, 0.5) == pytest.approx(9.765625e-4, rel=1e-12)
    assert H.binom_pmf(2, 4, 0.5) == pytest.approx(0.375, rel=1e-12)
    assert H.binom_pmf(7, 7, 1.0) == 1.0
    assert H.binom_pmf(17, 20, 0.5) == pytest.approx(1140 / 2 ** 20, rel=1e-12)


def test_binom_pmf_matches_exact():
    g = rng(31)
    for _ in range(200):
        n = int(g.integers(1, 80))
        k = int(g.integers(0, n + 1))
        p = float(g.choice([0.5, 0.25, 0.1, 0.9]))
        assert H.binom_pmf(k, n, p) == pytest.approx(binom_pmf_exact(k, n, p), rel=1e-10, abs=1e-300)


def test_binom_pmf_range_errors():
    with pytest.raises(H.OutOfRange):
        H.binom_pmf(5, 4, 0.5)
    with pytest.raises(H.OutOfRange):
        H.binom_pmf(1, 4, 1.5)


def test_herding_day_examples():
    assert H.herding_day(17, 3) == (1, 1)
    assert H.herding_day(2, 2) == (0, 0)
    assert H.herding_day(3, 17) == (1, -1)
    assert H.herding_day(20, 20)[1] == 0
    with pytest.raises(H.NoTraders):
        H.herding_day(0, 0)


def test_herding_day_matches_rule_oracle():
    for n in range(1, 45):
        for k in range(n + 1):
            assert H.herding_day(k, n - k) == herding_rule(k, n)


def test_herding_symmetry_and_monotonicity():
    for n in range(1, 40):
        for k in range(n + 1):
            a, b = H.herding_day(k, n - k), H.herding_day(n - k, k)
            assert a[0] == b[0] and a[1] == -b[1]
        for k in range((n + 1) // 2, n):
            if H.herding_day(k, n - k)[0]:
                assert H.herding_day(k + 1, n - k - 1)[0]


def test_unanimous_threshold_is_five():
    assert [H.herding_day(n, 0)[1] for n in range(1, 8)] == [0, 0, 0, 0, 1, 1, 1]


def test_null_rate_enumeration():
    assert null_herding_rate_enumerated(40) == pytest.approx(NULL_RATE_40, abs=1e-15)
    assert H.null_herding_rate(40) == pytest.approx(NULL_RATE_40, abs=1e-12)
    for n in (5, 10, 25, 62):
        assert H.null_herding_rate(n) == pytest.approx(null_herding_rate_enumerated(n), abs=1e-12)


def test_tail_rule_is_more_conservative():
    for n in range(5, 40):
        assert H.null_herding_rate(n, rule=H.TAIL_RULE) <= 0.05 + 1e-12
        assert H.null_herding_rate(n, rule=H.TAIL_RULE) <= H.null_herding_rate(n)


def test_panel_all_buy_and_balanced():
    buy = np.zeros((6, 10, 3))
    sell = np.zeros((6, 10, 3))
    buy[:, :, 0] = 1.0
    buy[:3, :, 1], sell[3:, :, 1] = 1.0, 1.0
    sell[:, :, 2] = 1.0
    p = make_panel(buy, sell, np.full((10, 3), 10.0))
    hp = H.herding_panel(p)
    assert (hp.H[:, 0] == 1).all() and (hp.H[:, 1] == 0).all() and (hp.H[:, 2] == -1).all()
    assert hp.valid.all()


def test_too_few_traders_marked_invalid():
    buy = np.ones((4, 10, 5))
    p = make_panel(buy, np.zeros_like(buy), np.full((10, 5), 10.0))
    hp = H.herding_panel(p)
    assert not hp.valid.any() and (hp.H == 0).all() and hp.skipped_days == 50


def test_coin_flip_null():
    from memberflow import synth

    res = synth.generate(synth.MarketSpec(seed=9, n_stocks=121, n_years=1), synth.null_agents(40))
    hp = H.herding_panel(res.panel)
    assert hp.mean_h() == pytest.approx(NULL_RATE_40, abs=0.02)


def test_direction_sign_flip():
    g = rng(32)
    r = g.normal(size=247)
    assert H.herding_direction(-np.sign(r), r) == pytest.approx(-pearson(np.sign(r), r))
    assert H.herding_direction(-np.sign(r), r) < 0
    with pytest.raises(ZeroVariance):
        H.herding_direction(np.zeros(10), g.normal(size=10))


def test_direction_null_band():
    # 0.15 is about 2.36 standard errors at n = 247, so roughly 98% of null draws fall inside
    g = rng(33)
    vals = [H.herding_direction(g.choice([-1, 0, 1], size=247), g.normal(size=247)) for _ in range(1000)]
    assert np.mean(np.abs(vals) < 0.15) >= 0.97


def test_group_decomposition(default_market):
    p = default_market.panel
    classes = {pr.member_id: pr.member_class for pr in classified_profiles(p)}
    total = H.herding_panel(p, "All", decile=1).n_buy
    parts = sum(H.herding_panel(p, g, decile=1, classes=classes).n_buy for g in ("DIM", "DSM", "FRM"))
    excluded = [j for j, m in enumerate(p.member_ids) if classes[m].value == "Excluded"]
    if excluded:
        sub = np.ix_(excluded, p.decile_stocks(1), np.arange(p.n_days))
        parts = parts + H.herding_counts(p.member_buy[sub], p.member_sell[sub], p.member_present[sub])[0]
    np.testing.assert_array_equal(total, parts)


def test_planted_group_directions(default_market):
    p = default_market.panel
    classes = {pr.member_id: pr.member_class for pr in classified_profiles(p)}
    dh = {g: H.mean_direction(H.herding_directions(H.herding_panel(p, g, decile=1, classes=classes), p))
          for g in ("DIM", "DSM", "FRM")}
    assert dh["DIM"] < -0.2 and dh["DSM"] < -0.2 and dh["FRM"] > 0.1


def test_empty_group(default_market):
    with pytest.raises(H.EmptyGroup):
        H.herding_panel(default_market.panel, "DIM", classes={})
    with pytest.raises(H.EmptyGroup):
        H.herding_panel(default_market.panel, "DIM")
