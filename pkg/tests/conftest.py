import numpy as np
import pytest

from memberflow import synth


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


@pytest.fixture(scope="session")
def default_market():
    """The default synthetic market: 12 DIM / 14 DSM / 21 FRM agents, 250 stocks, 2 years."""
    return synth.generate(synth.MarketSpec(seed=1))


@pytest.fixture(scope="session")
def small_market():
    return synth.generate(synth.MarketSpec(seed=3, n_stocks=40, n_years=1, days_per_year=120))


@pytest.fixture(scope="session")
def small_bundle(tmp_path_factory, small_market):
    return small_market.write(tmp_path_factory.mktemp("bundle"))


def make_panel(buy, sell, close, present=None, flows=None, domiciles=None, start="2021-01-04"):
    """Panel from (members, stocks, days) arrays; stock 0 has the largest cap."""
    from memberflow.panel import Domicile, MemberMeta, TradePanel

    buy, sell = np.asarray(buy, float), np.asarray(sell, float)
    m, s, t = buy.shape
    present = np.ones(buy.shape, bool) if present is None else np.asarray(present, bool)
    dates = np.busday_offset(np.datetime64(start), np.arange(t), roll="forward")
    if flows is None:
        fb = np.zeros((3, s, t))
        fb[0] = buy.sum(axis=0)
        fs = np.zeros((3, s, t))
        fs[0] = sell.sum(axis=0)
    else:
        fb, fs = (np.asarray(f, float) for f in flows)
    doms = domiciles or ["D"] * m
    ids = tuple(f"M{j:02d}" for j in range(m))
    metas = tuple(MemberMeta(mid, mid, Domicile(d), None, None) for mid, d in zip(ids, doms))
    return TradePanel(dates, tuple(f"S{i:02d}" for i in range(s)), ids, buy, sell, present,
                      fb, fs, np.ones((3, s, t), bool), np.asarray(close, float),
                      np.linspace(1e9, 1e8, s), metas)
