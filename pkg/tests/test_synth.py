import json
from dataclasses import replace

import numpy as np
import pytest

from memberflow import behavior, synth
from memberflow.herding import herding_panel, null_herding_rate
from memberflow.panel import consistency_check


def test_invalid_specs():
    with pytest.raises(synth.InvalidSpec):
        synth.generate(synth.MarketSpec(n_stocks=5))
    with pytest.raises(synth.InvalidSpec):
        synth.generate(synth.MarketSpec(factor_strength=tuple(np.linspace(0.1, 1.0, 10))))
    with pytest.raises(synth.InvalidSpec):
        synth.generate(synth.MarketSpec(n_stocks=20), [synth.AgentSpec("a", one_way_prob=1.5)])
    with pytest.raises(synth.InvalidSpec):
        synth.generate(synth.MarketSpec(n_stocks=20), [synth.AgentSpec("a", volume_scale=0.0)])
    with pytest.raises(synth.InvalidSpec):
        synth.generate(synth.MarketSpec(n_stocks=20), [synth.AgentSpec("a"), synth.AgentSpec("a")])
    with pytest.raises(synth.InvalidSpec):
        synth.generate(synth.MarketSpec(n_stocks=20, regression_betas=(0.9, 0, 0, 0)), synth.null_agents(5))


def test_same_seed_same_bytes(tmp_path):
    market = synth.MarketSpec(seed=5, n_stocks=20, n_years=1, days_per_year=50)
    a = synth.generate(market).write(tmp_path / "a")
    b = synth.generate(market).write(tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = synth.generate(replace(market, seed=6)).write(tmp_path / "c")
    assert (a / "trades.csv").read_bytes() != (c / "trades.csv").read_bytes()


def test_aggregation_identity(small_market):
    p = small_market.panel
    assert consistency_check(p) == []
    np.testing.assert_allclose(p.member_buy.sum(axis=0), p.flow_buy.sum(axis=0), rtol=1e-12)
    np.testing.assert_allclose(p.member_sell.sum(axis=0), p.flow_sell.sum(axis=0), rtol=1e-12)


def test_one_way_and_two_way_ratios(small_market):
    p = small_market.panel
    gross = p.member_buy + p.member_sell
    ok = p.member_present & (gross > 0)
    ratio = np.abs(p.member_buy - p.member_sell)[ok] / gross[ok]
    one_way = np.isclose(ratio, 1.0)
    assert one_way.any() and (~one_way).any()
    assert ratio[~one_way].min() >= 0.05 - 1e-9 and ratio[~one_way].max() <= 0.18 + 1e-9


def test_null_agents_have_no_trend_and_null_herding():
    res = synth.generate(synth.MarketSpec(seed=8, n_stocks=121, n_years=1), synth.null_agents(40))
    ts = [behavior.trend(res.panel, m, 1, None) for m in res.panel.member_ids]
    assert max(abs(t) for t in ts) < 0.05
    assert herding_panel(res.panel).mean_h() == pytest.approx(null_herding_rate(40), abs=0.02)


def test_single_trending_agent_in_range():
    agents = [synth.AgentSpec("F1", domicile="F", plant="FRM", trend_loading=0.7, volume_scale=1e8)]
    res = synth.generate(synth.MarketSpec(seed=9, n_stocks=121, n_years=1), agents)
    t = behavior.trend(res.panel, "F1", 1, None)
    assert 0.4 <= t <= 0.9
    assert synth.expected_trend(agents[0], res.market) == pytest.approx(0.7)


def test_manifest_contents():
    market = synth.MarketSpec(seed=2, regression_betas=(0.9, 0.001, -0.03, 0.002))
    agents = synth.default_agents(seed=2)
    man = synth.oracle_manifest(market, agents)
    assert man["regression_betas"] == {"Market": 0.9, "H_DSM": 0.001, "H_DIM": -0.03, "H_FRM": 0.002}
    assert man["class_counts"] == {"DIM": 12, "DSM": 14, "FRM": 21}
    assert [len(b) for b in man["community_partition"]] == [12, 14, 21]
    assert man["herding_direction_sign"] == {"DIM": "-", "DSM": "-", "FRM": "+"}
    for mid, info in man["members"].items():
        want = {"DIM": "-", "DSM": "-", "FRM": "+"}[info["plant"]]
        assert info["expected_T_sign"] == want
    json.dumps(man)


def test_expected_directionality():
    agent = synth.AgentSpec("x", one_way_prob=0.3)
    assert synth.expected_directionality(agent) == pytest.approx(0.3)
    assert synth.expected_directionality(agent, theta=0.1) == pytest.approx(0.3 + 0.7 * (0.08 / 0.13))


def test_spec_round_trip(tmp_path):
    market = synth.MarketSpec(seed=4, n_stocks=30, regression_betas=(0.9, 0.0015, -0.03, 0.002))
    agents = synth.default_agents(3, 2, 4, seed=4)
    path = tmp_path / "spec.ini"
    path.write_text(synth.dump_spec(market, agents))
    m2, a2 = synth.load_spec(path)
    assert m2 == market
    assert sorted(a2, key=lambda a: a.member_id) == sorted(agents, key=lambda a: a.member_id)


def test_spec_market_only_and_errors(tmp_path):
    path = tmp_path / "spec.ini"
    path.write_text("[market]\nn_stocks = 40\nseed = 7\n")
    market, agents = synth.load_spec(path)
    assert market.n_stocks == 40 and market.seed == 7 and agents is None
    path.write_text("[market]\nbogus = 1\n")
    with pytest.raises(synth.InvalidSpec):
        synth.load_spec(path)
    with pytest.raises(synth.InvalidSpec):
        synth.load_spec(tmp_path / "missing.ini")


def test_bundle_files(small_bundle):
    names = {p.name for p in small_bundle.iterdir()}
    assert {"trades.csv", "investor_flows.csv", "prices.csv", "stocks.csv", "members.csv",
            "labels.csv", "manifest.json", "market_index.csv", "riskfree.csv", "spec.ini"} <= names


def test_block_covariance_must_be_positive_definite():
    with pytest.raises(synth.InvalidSpec):
        synth.planted_block_panel((10, 10), within=0.3, across=-0.9)
