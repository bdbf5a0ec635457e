"""Synthetic market generator with planted member behaviours.

Randomness comes from NumPy's PCG64 bit generator seeded through
``SeedSequence(seed)``; every draw happens in a fixed order, so a given
(spec, seed) pair always produces the same bytes.

Generative model, per stock ``i`` and day ``t``:

* a stock signal ``v = sqrt(rho_d) F(t) + sqrt(1 - rho_d) eta_i(t)``, standard normal,
  where ``F`` is a market-wide factor and ``rho_d`` the decile's return factor share;
* each plant group G keeps a shared latent ``g_G = gamma_G c_d v + noise`` and each
  agent an own latent ``z_j = beta_j c_d v + noise`` (both unit variance), ``c_d``
  being the decile's behavioural factor strength;
* with probability ``herd_coupling`` an agent trades on ``g_G`` instead of ``z_j``;
  its net flow is ``x = volume_scale * latent``;
* with probability ``one_way_prob`` the day is one-way (|B-S|/(B+S) = 1), otherwise
  two-way with ratio uniform on [0.05, 0.18];
* investor-type flows are each member's (B, S) split by its client mix.

Returns are ``sigma_d v`` by default. When ``regression_betas`` is set, returns
follow ``rf + b_m (m - rf) + sum_g b_g H_g + noise`` with an exogenous index
``m = rf + market_vol F``; the stock-specific part of ``v`` then never enters
returns, keeping the planted regression free of simultaneity.
"""
from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from memberflow.errors import MemberFlowError
from memberflow.herding import MIN_TRADERS, herding_counts, herding_from_counts
from memberflow.panel import Domicile, MemberMeta, TradePanel, write_bundle

TWO_WAY_RATIO = (0.05, 0.18)
PLANTS = ("DIM", "DSM", "FRM")


class InvalidSpec(MemberFlowError, ValueError):
    module = "synth"


def _decaying(first: float, last: float) -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(first, last, 10))


@dataclass(frozen=True)
class MarketSpec:
    n_stocks: int = 250
    n_years: int = 2
    start_year: int = 2007
    days_per_year: int = 247
    return_vol: tuple[float, ...] = _decaying(0.015, 0.03)
    return_factor_share: tuple[float, ...] = _decaying(0.4, 0.1)
    factor_strength: tuple[float, ...] = _decaying(1.0, 0.1)
    group_herding: tuple[float, float, float] = (-0.7, -0.6, 0.5)
    riskfree_yield: float = 0.025
    market_vol: float = 0.01
    regression_betas: tuple[float, float, float, float] | None = None
    regression_noise: float = 0.01
    min_traders: int = MIN_TRADERS
    seed: int = 0

    def validate(self):
        if min(self.n_stocks, self.n_years, self.days_per_year) <= 0:
            raise InvalidSpec("counts must be positive")
        if self.n_stocks < 10:
            raise InvalidSpec("need at least 10 stocks for decile assignment")
        for name in ("return_vol", "return_factor_share", "factor_strength"):
            vals = getattr(self, name)
            if len(vals) != 10:
                raise InvalidSpec(f"{name} needs one value per decile")
        if any(v <= 0 for v in self.return_vol):
            raise InvalidSpec("return_vol must be positive")
        if any(not 0 <= v <= 1 for v in self.return_factor_share + self.factor_strength):
            raise InvalidSpec("factor shares and strengths must lie in [0, 1]")
        if any(b > a + 1e-12 for a, b in zip(self.factor_strength, self.factor_strength[1:])):
            raise InvalidSpec("factor_strength must be non-increasing in decile index")
        if any(not -1 <= g <= 1 for g in self.group_herding):
            raise InvalidSpec("group_herding loadings must lie in [-1, 1]")
        if self.regression_betas is not None and len(self.regression_betas) != 4:
            raise InvalidSpec("regression_betas is (market, DSM, DIM, FRM)")


@dataclass(frozen=True)
class AgentSpec:
    member_id: str
    domicile: str = "D"
    plant: str | None = None
    trend_loading: float = 0.0
    one_way_prob: float = 0.5
    herd_coupling: float = 0.0
    volume_scale: float = 1.0
    client_mix: tuple[float, float, float] = (1.0, 0.0, 0.0)
    activity: float = 1.0
    name: str = ""

    def validate(self):
        if self.domicile not in ("D", "F"):
            raise InvalidSpec(f"{self.member_id}: domicile must be D or F")
        if self.plant is not None and self.plant not in PLANTS:
            raise InvalidSpec(f"{self.member_id}: unknown plant {self.plant!r}")
        for name in ("one_way_prob", "herd_coupling", "activity"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidSpec(f"{self.member_id}: {name} must lie in [0, 1]")
        if not -1 <= self.trend_loading <= 1:
            raise InvalidSpec(f"{self.member_id}: trend_loading must lie in [-1, 1]")
        if not self.volume_scale > 0:
            raise InvalidSpec(f"{self.member_id}: volume_scale must be positive")
        mix = np.asarray(self.client_mix, dtype=float)
        if mix.shape != (3,) or (mix < 0).any() or abs(mix.sum() - 1) > 1e-9:
            raise InvalidSpec(f"{self.member_id}: client_mix must be 3 non-negative weights summing to 1")
        if self.herd_coupling > 0 and self.plant is None:
            raise InvalidSpec(f"{self.member_id}: herding coupling needs a plant group")


# Plant templates: (domicile, trend loading, one-way prob, coupling, volume, client mix)
_TEMPLATES = {
    "DIM": ("D", -0.5, 0.25, 0.65, 3.0, (0.85, 0.10, 0.05)),
    "DSM": ("D", -0.2, 0.45, 0.65, 1.0, (0.15, 0.80, 0.05)),
    "FRM": ("F", 0.6, 0.75, 0.45, 2.0, (0.05, 0.05, 0.90)),
}


def default_agents(n_dim: int = 12, n_dsm: int = 14, n_frm: int = 21, seed: int = 0,
                   activity: float = 0.97, amount_unit: float = 1e8) -> list[AgentSpec]:
    """Agents mimicking the three member classes, with small per-agent jitter."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    plants = ["DIM"] * n_dim + ["DSM"] * n_dsm + ["FRM"] * n_frm
    order = rng.permutation(len(plants))
    agents = []
    for k, pos in enumerate(order):
        plant = plants[pos]
        dom, beta, pi, kappa, vol, mix = _TEMPLATES[plant]
        mix = np.asarray(mix) * rng.uniform(0.9, 1.1, 3)
        mix = tuple(float(v) for v in mix / mix.sum())
        agents.append(AgentSpec(
            member_id=f"M{k + 1:03d}", domicile=dom, plant=plant,
            trend_loading=float(np.clip(beta + rng.uniform(-0.05, 0.05), -1, 1)),
            one_way_prob=float(np.clip(pi + rng.uniform(-0.05, 0.05), 0, 1)),
            herd_coupling=float(np.clip(kappa + rng.uniform(-0.05, 0.05), 0, 1)),
            volume_scale=float(vol * amount_unit * rng.lognormal(0.0, 0.2)),
            client_mix=mix, activity=activity, name=f"Member {k + 1:03d}",
        ))
    return agents


def null_agents(n: int = 40, activity: float = 1.0, amount_unit: float = 1e8) -> list[AgentSpec]:
    """Independent agents: no trend loading, no herding coupling (fair-coin direction)."""
    mixes = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
    return [AgentSpec(member_id=f"N{k + 1:03d}", domicile="F" if k % 3 == 2 else "D",
                      volume_scale=amount_unit, client_mix=mixes[k % 3], activity=activity,
                      name=f"Null {k + 1:03d}") for k in range(n)]


def trading_calendar(start_year: int, n_years: int, days_per_year: int) -> np.ndarray:
    """First ``days_per_year`` weekdays of each calendar year."""
    out = []
    for y in range(start_year, start_year + n_years):
        days = np.arange(np.datetime64(f"{y}-01-01"), np.datetime64(f"{y + 1}-01-01"))
        weekdays = days[np.is_busday(days)]
        if weekdays.size < days_per_year:
            raise InvalidSpec(f"days_per_year exceeds the {weekdays.size} weekdays of {y}")
        out.append(weekdays[:days_per_year])
    return np.concatenate(out)


def _caps(n: int) -> np.ndarray:
    return 1e13 * np.exp(-np.arange(n) * (6.0 / n))


@dataclass(eq=False)
class SynthResult:
    panel: TradePanel
    market: MarketSpec
    agents: list[AgentSpec]
    market_index: np.ndarray
    riskfree_yield: np.ndarray
    labels: dict[str, str | None]
    planted_herding: dict[str, np.ndarray] = field(default_factory=dict)

    def manifest(self) -> dict:
        return oracle_manifest(self.market, self.agents)

    def write(self, directory) -> Path:
        return write_synth_bundle(self, directory)


def _signal_sqrt(load: np.ndarray) -> np.ndarray:
    return np.sqrt(np.clip(1.0 - load * load, 0.0, None))


def generate(market: MarketSpec | None = None, agents: list[AgentSpec] | None = None) -> SynthResult:
    market = MarketSpec() if market is None else market
    agents = default_agents(seed=market.seed) if agents is None else list(agents)
    market.validate()
    if not agents:
        raise InvalidSpec("need at least one agent")
    ids = [a.member_id for a in agents]
    if len(set(ids)) != len(ids):
        raise InvalidSpec("agent member_ids must be unique")
    for a in agents:
        a.validate()
    if market.regression_betas is not None and not all(
            any(a.plant == g for a in agents) for g in PLANTS):
        raise InvalidSpec("a regression plant needs DIM, DSM and FRM agents")

    agents = sorted(agents, key=lambda a: a.member_id)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(market.seed)))
    dates = trading_calendar(market.start_year, market.n_years, market.days_per_year)
    n_a, n_s, n_t = len(agents), market.n_stocks, dates.size

    caps = _caps(n_s)
    stock_ids = tuple(f"S{i + 1:04d}" for i in range(n_s))
    decile = np.concatenate([np.full(c.size, d) for d, c in
                             enumerate(np.array_split(np.arange(n_s), 10))])
    vol = np.asarray(market.return_vol)[decile]
    rho = np.asarray(market.return_factor_share)[decile]
    strength = np.asarray(market.factor_strength)[decile]

    beta = np.array([a.trend_loading for a in agents])
    kappa = np.array([a.herd_coupling for a in agents])
    pi = np.array([a.one_way_prob for a in agents])
    scale = np.array([a.volume_scale for a in agents])
    activity = np.array([a.activity for a in agents])
    mix = np.array([a.client_mix for a in agents])
    group_of = np.array([PLANTS.index(a.plant) if a.plant else -1 for a in agents])
    gamma = np.asarray(market.group_herding)

    factor = rng.standard_normal(n_t)
    eta = rng.standard_normal((n_s, n_t))
    signal = np.sqrt(rho)[:, None] * factor[None, :] + np.sqrt(1 - rho)[:, None] * eta

    group_load = gamma[:, None] * strength[None, :]
    group_latent = (group_load[:, :, None] * signal[None]
                    + _signal_sqrt(group_load)[:, :, None] * rng.standard_normal((3, n_s, n_t)))
    own_load = beta[:, None] * strength[None, :]
    latent = (own_load[:, :, None] * signal[None]
              + _signal_sqrt(own_load)[:, :, None] * rng.standard_normal((n_a, n_s, n_t)))
    follows = rng.random((n_a, n_s, n_t)) < kappa[:, None, None]
    for g in range(3):
        members = group_of == g
        if members.any():
            sub = latent[members]
            np.copyto(sub, np.broadcast_to(group_latent[g], sub.shape), where=follows[members])
            latent[members] = sub
    del follows

    net = scale[:, None, None] * latent
    del latent
    one_way = rng.random((n_a, n_s, n_t)) < pi[:, None, None]
    ratio = np.where(one_way, 1.0, rng.uniform(*TWO_WAY_RATIO, size=(n_a, n_s, n_t)))
    del one_way
    gross = np.abs(net) / ratio
    del ratio
    present = rng.random((n_a, n_s, n_t)) < activity[:, None, None]
    buy = np.where(present, 0.5 * (gross + net), 0.0)
    sell = np.where(present, 0.5 * (gross - net), 0.0)
    del gross, net
    # one-way days: the minor side is exactly zero
    buy[buy < 0] = 0.0
    sell[sell < 0] = 0.0

    flow_buy = np.einsum("ak,ast->kst", mix, buy)
    flow_sell = np.einsum("ak,ast->kst", mix, sell)
    flow_present = np.broadcast_to(present.any(axis=0), (3, n_s, n_t)).copy()

    rf_yield = np.full(n_t, market.riskfree_yield)
    rf = rf_yield / 247.0
    planted_h = {}
    if market.regression_betas is None:
        returns = vol[:, None] * signal
        market_index = _cap_weighted(returns, caps, decile == 0)
    else:
        b_mkt, b_dsm, b_dim, b_frm = market.regression_betas
        market_index = rf + market.market_vol * factor
        returns = rf[None, :] + b_mkt * (market_index - rf)[None, :]
        for g, b in (("DSM", b_dsm), ("DIM", b_dim), ("FRM", b_frm)):
            members = group_of == PLANTS.index(g)
            nb, ns = herding_counts(buy[members], sell[members], present[members])
            _, H, _ = herding_from_counts(nb, ns, min_traders=market.min_traders)
            planted_h[g] = H
            returns = returns + b * H
        returns = returns + market.regression_noise * rng.standard_normal((n_s, n_t))

    close = np.empty((n_s, n_t))
    close[:, 0] = 10000.0 * rng.uniform(0.5, 2.0, n_s)
    for t in range(1, n_t):
        close[:, t] = close[:, t - 1] * (1.0 + returns[:, t])

    members = []
    for j, a in enumerate(agents):
        days = np.flatnonzero(present[j].any(axis=0))
        first, last = (dates[days[0]], dates[days[-1]]) if days.size else (None, None)
        members.append(MemberMeta(a.member_id, a.name or a.member_id, Domicile(a.domicile), first, last))
    panel = TradePanel(dates, stock_ids, tuple(a.member_id for a in agents), buy, sell, present,
                       flow_buy, flow_sell, flow_present, close, caps, tuple(members))
    labels = {a.member_id: a.plant for a in agents}
    return SynthResult(panel, market, agents, market_index, rf_yield, labels, planted_h)


def _cap_weighted(returns: np.ndarray, caps: np.ndarray, select: np.ndarray) -> np.ndarray:
    w = caps[select]
    return (returns[select] * w[:, None]).sum(axis=0) / w.sum()


def expected_trend(agent: AgentSpec, market: MarketSpec, decile: int = 1) -> float:
    """Population corr(x, signal) of an agent's flow in a decile (exact for the default return model)."""
    c = market.factor_strength[decile - 1]
    own = agent.trend_loading * c
    if agent.plant is None:
        return own
    group = market.group_herding[PLANTS.index(agent.plant)] * c
    return (1 - agent.herd_coupling) * own + agent.herd_coupling * group


def expected_directionality(agent: AgentSpec, theta: float = 0.2) -> float:
    lo, hi = TWO_WAY_RATIO
    two_way_hit = min(1.0, max(0.0, (hi - theta) / (hi - lo)))
    return agent.one_way_prob + (1 - agent.one_way_prob) * two_way_hit


def _sign(v: float) -> str:
    return "+" if v > 0 else "-" if v < 0 else "0"


def oracle_manifest(market: MarketSpec, agents: list[AgentSpec]) -> dict:
    """Machine-readable expected signs and ranges derived from the plants alone."""
    agents = sorted(agents, key=lambda a: a.member_id)
    members = {}
    for a in agents:
        t = expected_trend(a, market)
        members[a.member_id] = {
            "plant": a.plant,
            "domicile": a.domicile,
            "expected_class": a.plant,
            "expected_T_decile1": t,
            "expected_T_sign": _sign(t),
            "expected_D": expected_directionality(a),
        }
    groups = {g: sorted(a.member_id for a in agents if a.plant == g) for g in PLANTS}
    partition = [groups[g] for g in PLANTS if groups[g]]
    herding = {g: _sign(market.group_herding[i]) for i, g in enumerate(PLANTS) if groups[g]}
    out = {
        "seed": market.seed,
        "rng": "numpy PCG64 via SeedSequence(seed)",
        "members": members,
        "class_counts": {g: len(groups[g]) for g in PLANTS},
        "community_partition": partition,
        "herding_direction_sign": herding,
        "factor_strength": list(market.factor_strength),
        "expected_factor_corr_order": "non-increasing in decile",
        "regression_betas": None,
    }
    if market.regression_betas is not None:
        b = market.regression_betas
        out["regression_betas"] = {"Market": b[0], "H_DSM": b[1], "H_DIM": b[2], "H_FRM": b[3]}
    return out


def block_covariance(sizes, within: float, across: float) -> np.ndarray:
    labels = np.repeat(np.arange(len(sizes)), sizes)
    cov = np.where(labels[:, None] == labels[None, :], within, across)
    np.fill_diagonal(cov, 1.0)
    return cov


def planted_block_panel(sizes=(12, 14, 21), within: float = 0.3, across: float = -0.1,
                        n_stocks: int = 100, days_per_year: int = 247, seed: int = 0,
                        start_year: int = 2007) -> tuple[TradePanel, dict[str, int]]:
    """Panel whose member net flows are Gaussian with block correlation structure.

    Every stock draws its own (members x days) flow matrix with covariance
    ``within`` inside a block and ``across`` between blocks. Returns the panel and
    each member's block index.
    """
    cov = block_covariance(sizes, within, across)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InvalidSpec("block correlation matrix is not positive definite") from None
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    dates = trading_calendar(start_year, 1, days_per_year)
    n_m, n_t = cov.shape[0], dates.size
    net = np.einsum("ij,sjt->ist", chol, rng.standard_normal((n_stocks, n_m, n_t))) * 1e8
    buy, sell = np.clip(net, 0, None), np.clip(-net, 0, None)
    present = np.ones(net.shape, bool)
    flow_buy = np.zeros((3, n_stocks, n_t))
    flow_sell = np.zeros((3, n_stocks, n_t))
    flow_buy[0], flow_sell[0] = buy.sum(axis=0), sell.sum(axis=0)
    close = 1e4 * np.cumprod(1 + 0.02 * rng.standard_normal((n_stocks, n_t)), axis=1)
    perm = rng.permutation(n_m)
    ids = [f"B{k + 1:03d}" for k in range(n_m)]
    order = np.argsort(perm)
    member_ids = tuple(ids[perm[j]] for j in order)
    members = tuple(MemberMeta(mid, mid, Domicile.DOMESTIC, dates[0], dates[-1]) for mid in member_ids)
    panel = TradePanel(dates, tuple(f"S{i + 1:04d}" for i in range(n_stocks)), member_ids,
                       buy[order], sell[order], present, flow_buy, flow_sell,
                       np.ones((3, n_stocks, n_t), bool), close, _caps(n_stocks), members)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    return panel, {member_ids[j]: int(labels[order[j]]) for j in range(n_m)}


# -- spec files ------------------------------------------------------------------

_TUPLE_FIELDS = {"return_vol", "return_factor_share", "factor_strength", "group_herding",
                 "regression_betas", "client_mix"}


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(name: str, raw: str, kind):
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    if name in _TUPLE_FIELDS:
        return tuple(float(x) for x in raw.split(","))
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def dump_spec(market: MarketSpec, agents: list[AgentSpec]) -> str:
    """Render specs as INI-style ``key = value`` text; one ``[agent <id>]`` section per agent."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["market"] = {f.name: _format_value(getattr(market, f.name)) for f in fields(MarketSpec)}
    for a in sorted(agents, key=lambda a: a.member_id):
        cp[f"agent {a.member_id}"] = {f.name: _format_value(getattr(a, f.name))
                                      for f in fields(AgentSpec) if f.name != "member_id"}
    import io

    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load_spec(path) -> tuple[MarketSpec, list[AgentSpec] | None]:
    """Read a spec file; without agent sections the default agents are used."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (configparser.Error, OSError) as exc:
        raise InvalidSpec(f"cannot read spec {path}: {exc}") from None
    types = {f.name: f.type for f in fields(MarketSpec)}
    kwargs = {}
    if cp.has_section("market"):
        for key, raw in cp["market"].items():
            if key not in types:
                raise InvalidSpec(f"unknown market key {key!r}")
            kwargs[key] = _parse_value(key, raw, _kind(types[key]))
    market = MarketSpec(**kwargs)
    agent_types = {f.name: f.type for f in fields(AgentSpec)}
    agents = []
    for section in cp.sections():
        if not section.startswith("agent "):
            continue
        akw = {"member_id": section[len("agent "):].strip()}
        for key, raw in cp[section].items():
            if key not in agent_types:
                raise InvalidSpec(f"unknown agent key {key!r} in [{section}]")
            akw[key] = _parse_value(key, raw, _kind(agent_types[key]))
        agents.append(AgentSpec(**akw))
    return market, agents or None


def _kind(annotation) -> str:
    text = str(annotation)
    if text.startswith("int"):
        return "int"
    if text.startswith("float"):
        return "float"
    return "str"


def write_synth_bundle(result: SynthResult, directory) -> Path:
    """Panel CSVs plus market_index.csv, riskfree.csv, labels.csv, spec.ini and manifest.json."""
    directory = write_bundle(result.panel, directory)
    date_str = np.datetime_as_string(result.panel.dates, unit="D")
    pd.DataFrame({"date": date_str, "return": [repr(float(v)) for v in result.market_index]}).to_csv(
        directory / "market_index.csv", index=False)
    pd.DataFrame({"date": date_str, "yield": [repr(float(v)) for v in result.riskfree_yield]}).to_csv(
        directory / "riskfree.csv", index=False)
    pd.DataFrame({"member_id": list(result.labels),
                  "plant": [v or "" for v in result.labels.values()]}).to_csv(directory / "labels.csv", index=False)
    (directory / "spec.ini").write_text(dump_spec(result.market, result.agents), encoding="utf-8")
    (directory / "manifest.json").write_text(
        json.dumps(result.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def with_seed(market: MarketSpec, seed: int) -> MarketSpec:
    return replace(market, seed=seed)


def spec_dict(market: MarketSpec) -> dict:
    return asdict(market)
