"""Trade panel data model, CSV ingestion/export and market-cap decile statistics.

A :class:`TradePanel` stores every daily flow on a dense (entity, stock, day)
grid together with a presence mask, so that missing records can be told apart
from genuine zero flows.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import pandas as pd

from memberflow.errors import MemberFlowError

log = logging.getLogger(__name__)

N_DECILES = 10
CONSISTENCY_RTOL = 1e-6


class PanelError(MemberFlowError, ValueError):
    module = "panel"


class MissingFile(PanelError):
    pass


class MalformedRow(PanelError):
    def __init__(self, path, line: int, reason: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{Path(path).name}:{line}: {reason}")


class DuplicateKey(PanelError):
    pass


class UnknownReference(PanelError):
    pass


class NonPositivePrice(PanelError):
    pass


class TooFewStocks(PanelError):
    pass


class EmptyDecile(PanelError):
    pass


class UnknownEntity(PanelError):
    pass


class UnknownStock(PanelError):
    pass


class InvestorType(str, Enum):
    INDIVIDUAL = "IND"
    INSTITUTION = "INS"
    FOREIGNER = "FRG"


INVESTOR_TYPES = (InvestorType.INDIVIDUAL, InvestorType.INSTITUTION, InvestorType.FOREIGNER)


class Domicile(str, Enum):
    DOMESTIC = "D"
    FOREIGN = "F"


@dataclass(frozen=True)
class TradeRecord:
    date: np.datetime64
    stock_id: str
    member_id: str
    buy_amount: float
    sell_amount: float


@dataclass(frozen=True)
class InvestorFlowRecord:
    date: np.datetime64
    stock_id: str
    investor_type: InvestorType
    buy_amount: float
    sell_amount: float


@dataclass(frozen=True)
class StockMeta:
    stock_id: str
    market_cap: float
    decile: int


@dataclass(frozen=True)
class MemberMeta:
    member_id: str
    name: str
    domicile: Domicile
    first_day: np.datetime64 | None = None
    last_day: np.datetime64 | None = None


@dataclass(frozen=True)
class PriceSeries:
    stock_id: str
    dates: np.ndarray
    close: np.ndarray
    returns: np.ndarray


@dataclass(frozen=True)
class InventorySeries:
    """Daily net flow x(t) = buy - sell of one entity on one stock."""

    entity: str
    stock_id: str
    dates: np.ndarray
    x: np.ndarray
    active: np.ndarray


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TradePanel:
    """Immutable master dataset.

    Member arrays have shape ``(n_members, n_stocks, n_days)``, investor-type
    arrays ``(3, n_stocks, n_days)`` in :data:`INVESTOR_TYPES` order, price
    arrays ``(n_stocks, n_days)`` with NaN where no close was recorded.
    """

    dates: np.ndarray
    stock_ids: tuple[str, ...]
    member_ids: tuple[str, ...]
    member_buy: np.ndarray
    member_sell: np.ndarray
    member_present: np.ndarray
    flow_buy: np.ndarray
    flow_sell: np.ndarray
    flow_present: np.ndarray
    close: np.ndarray
    market_cap: np.ndarray
    members: tuple[MemberMeta, ...]
    log_returns: bool = False
    warnings: tuple[str, ...] = ()
    decile: np.ndarray = field(init=False)
    returns: np.ndarray = field(init=False)
    years: np.ndarray = field(init=False)

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        if dates.size > 1 and not np.all(np.diff(dates) > np.timedelta64(0, "D")):
            raise PanelError("trading calendar must be strictly increasing")
        m, s, t = len(self.member_ids), len(self.stock_ids), dates.size
        shapes = {
            "member_buy": (m, s, t), "member_sell": (m, s, t), "member_present": (m, s, t),
            "flow_buy": (3, s, t), "flow_sell": (3, s, t), "flow_present": (3, s, t),
            "close": (s, t), "market_cap": (s,),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise PanelError(f"{name} has shape {arr.shape}, expected {shape}")
        if len(self.members) != m or any(
            meta.member_id != mid for meta, mid in zip(self.members, self.member_ids)
        ):
            raise PanelError("member metadata must align with member_ids")
        set_ = object.__setattr__
        set_(self, "dates", _freeze(dates))
        for name in ("member_buy", "member_sell", "flow_buy", "flow_sell", "close", "market_cap"):
            set_(self, name, _freeze(np.asarray(getattr(self, name), dtype=float)))
        for name in ("member_present", "flow_present"):
            set_(self, name, _freeze(np.asarray(getattr(self, name), dtype=bool)))
        set_(self, "stock_ids", tuple(self.stock_ids))
        set_(self, "member_ids", tuple(self.member_ids))
        deciles = assign_deciles(zip(self.stock_ids, self.market_cap)) if s >= N_DECILES else {}
        set_(self, "decile", _freeze(np.array([deciles.get(sid, 0) for sid in self.stock_ids], dtype=int)))
        set_(self, "returns", _freeze(compute_returns(self.close, log=self.log_returns)))
        set_(self, "years", _freeze(dates.astype("datetime64[Y]").astype(int) + 1970))
        set_(self, "_stock_index", {sid: i for i, sid in enumerate(self.stock_ids)})
        set_(self, "_member_index", {mid: i for i, mid in enumerate(self.member_ids)})

    # -- lookups -----------------------------------------------------------
    @property
    def n_members(self) -> int:
        return len(self.member_ids)

    @property
    def n_stocks(self) -> int:
        return len(self.stock_ids)

    @property
    def n_days(self) -> int:
        return int(self.dates.size)

    @property
    def year_list(self) -> list[int]:
        return sorted(set(self.years.tolist()))

    @property
    def domiciles(self) -> np.ndarray:
        return np.array([m.domicile.value for m in self.members])

    def stock_index(self, stock_id: str) -> int:
        try:
            return self._stock_index[stock_id]
        except KeyError:
            raise UnknownStock(f"unknown stock {stock_id!r}") from None

    def member_index(self, member_id: str) -> int:
        try:
            return self._member_index[member_id]
        except KeyError:
            raise UnknownEntity(f"unknown member {member_id!r}") from None

    def year_mask(self, year: int | None) -> np.ndarray:
        if year is None:
            return np.ones(self.n_days, dtype=bool)
        return self.years == year

    def decile_stocks(self, decile: int) -> np.ndarray:
        return np.flatnonzero(self.decile == decile)

    def stock_meta(self) -> list[StockMeta]:
        return [
            StockMeta(sid, float(cap), int(d))
            for sid, cap, d in zip(self.stock_ids, self.market_cap, self.decile)
        ]

    def price_series(self, stock_id: str) -> PriceSeries:
        i = self.stock_index(stock_id)
        ok = ~np.isnan(self.close[i])
        return PriceSeries(stock_id, self.dates[ok], self.close[i, ok], self.returns[i, ok])

    def member_volume(self, stocks: np.ndarray | None = None, year: int | None = None) -> np.ndarray:
        """Total buy+sell amount per member over the given stocks/year."""
        stocks = np.arange(self.n_stocks) if stocks is None else np.asarray(stocks)
        days = self.year_mask(year)
        gross = self.member_buy[:, stocks][:, :, days] + self.member_sell[:, stocks][:, :, days]
        return gross.sum(axis=(1, 2))

    def entity_arrays(self, entity) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(buy, sell, present) arrays of shape (n_stocks, n_days) for a member or investor type."""
        if isinstance(entity, InvestorType):
            k = INVESTOR_TYPES.index(entity)
            return self.flow_buy[k], self.flow_sell[k], self.flow_present[k]
        if entity in self._member_index:
            j = self._member_index[entity]
            return self.member_buy[j], self.member_sell[j], self.member_present[j]
        try:
            return self.entity_arrays(InvestorType(entity))
        except ValueError:
            raise UnknownEntity(f"unknown entity {entity!r}") from None

    # -- record views ------------------------------------------------------
    def trade_records(self) -> Iterator[TradeRecord]:
        for j, s, t in zip(*np.nonzero(self.member_present)):
            yield TradeRecord(self.dates[t], self.stock_ids[s], self.member_ids[j],
                              float(self.member_buy[j, s, t]), float(self.member_sell[j, s, t]))

    def flow_records(self) -> Iterator[InvestorFlowRecord]:
        for k, s, t in zip(*np.nonzero(self.flow_present)):
            yield InvestorFlowRecord(self.dates[t], self.stock_ids[s], INVESTOR_TYPES[k],
                                     float(self.flow_buy[k, s, t]), float(self.flow_sell[k, s, t]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TradePanel):
            return NotImplemented
        if (self.stock_ids, self.member_ids, self.members, self.log_returns) != (
            other.stock_ids, other.member_ids, other.members, other.log_returns
        ):
            return False
        names = ("dates", "member_buy", "member_sell", "member_present", "flow_buy",
                 "flow_sell", "flow_present", "market_cap")
        if not all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names):
            return False
        return np.array_equal(self.close, other.close, equal_nan=True)

    __hash__ = None


def compute_returns(close: np.ndarray, log: bool = False) -> np.ndarray:
    """Close-to-close returns along the last axis; NaN where either close is missing."""
    close = np.asarray(close, dtype=float)
    out = np.full(close.shape, np.nan)
    prev, cur = close[..., :-1], close[..., 1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        out[..., 1:] = np.log(cur / prev) if log else cur / prev - 1.0
    return out


def assign_deciles(caps: Iterable[tuple[str, float]]) -> dict[str, int]:
    """Rank stocks by descending cap (ties by id) into 10 near-equal groups, 1 = largest."""
    caps = [(str(sid), float(cap)) for sid, cap in caps]
    if len(caps) < N_DECILES:
        raise TooFewStocks(f"need at least {N_DECILES} stocks, got {len(caps)}")
    bad = [sid for sid, cap in caps if not cap > 0 or not np.isfinite(cap)]
    if bad:
        raise PanelError(f"market caps must be positive: {bad[:5]}")
    ranked = sorted(caps, key=lambda c: (-c[1], c[0]))
    out = {}
    for d, chunk in enumerate(np.array_split(np.arange(len(ranked)), N_DECILES), start=1):
        for pos in chunk:
            out[ranked[pos][0]] = d
    return out


def investor_share(panel: TradePanel, decile: int) -> dict[InvestorType, float]:
    """Fraction of the decile's buy+sell amount traded by each investor type."""
    stocks = panel.decile_stocks(decile)
    if stocks.size == 0:
        raise EmptyDecile(f"decile {decile} has no stocks")
    totals = (panel.flow_buy[:, stocks] + panel.flow_sell[:, stocks]).sum(axis=(1, 2))
    grand = totals.sum()
    if grand <= 0:
        raise EmptyDecile(f"decile {decile} has no investor flow")
    return {t: float(v / grand) for t, v in zip(INVESTOR_TYPES, totals)}


def inventory_series(panel: TradePanel, entity, stock_id: str, year: int | None) -> InventorySeries:
    s = panel.stock_index(stock_id)
    buy, sell, present = panel.entity_arrays(entity)
    days = panel.year_mask(year)
    active = present[s, days].copy()
    x = np.where(active, buy[s, days] - sell[s, days], 0.0)
    name = entity.value if isinstance(entity, InvestorType) else str(entity)
    return InventorySeries(name, stock_id, panel.dates[days], x, active)


# -- CSV ingestion -----------------------------------------------------------

FILES = {
    "trades": ("trades.csv", ["date", "stock_id", "member_id", "buy_amount", "sell_amount"]),
    "flows": ("investor_flows.csv", ["date", "stock_id", "investor_type", "buy_amount", "sell_amount"]),
    "prices": ("prices.csv", ["date", "stock_id", "close"]),
    "stocks": ("stocks.csv", ["stock_id", "market_cap"]),
    "members": ("members.csv", ["member_id", "name", "domicile"]),
}


def _read(directory: Path, key: str) -> tuple[Path, pd.DataFrame]:
    fname, cols = FILES[key]
    path = directory / fname
    if not path.is_file():
        raise MissingFile(f"{path} not found")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise MalformedRow(path, 1, "empty file, header row required") from None
    except pd.errors.ParserError as exc:
        raise MalformedRow(path, 1, f"unparseable CSV: {exc}") from None
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise MalformedRow(path, 1, f"missing columns {missing}")
    df = df[cols].apply(lambda c: c.str.strip())
    return path, df


def _first_bad(path: Path, bad: np.ndarray, reason: str):
    if bad.any():
        raise MalformedRow(path, int(np.flatnonzero(bad)[0]) + 2, reason)


def _parse_dates(path: Path, col: pd.Series) -> np.ndarray:
    parsed = pd.to_datetime(col, format="%Y-%m-%d", errors="coerce")
    _first_bad(path, parsed.isna().to_numpy(), "date is not ISO-8601 (YYYY-MM-DD)")
    return parsed.to_numpy().astype("datetime64[D]")


def _to_float(col: pd.Series) -> np.ndarray:
    """Exact decimal-to-double conversion; unparseable cells become NaN."""
    ok = pd.to_numeric(col, errors="coerce").notna().to_numpy()
    out = np.full(len(col), np.nan)
    out[ok] = col[ok].astype(float).to_numpy()
    return out


def _parse_amount(path: Path, col: pd.Series, name: str, positive: bool = False) -> np.ndarray:
    vals = _to_float(col)
    _first_bad(path, ~np.isfinite(vals), f"{name} is not a finite number")
    if positive:
        _first_bad(path, vals <= 0, f"{name} must be positive")
    else:
        _first_bad(path, vals < 0, f"{name} must be non-negative")
    return vals


def _check_ids(path: Path, df: pd.DataFrame, cols: list[str]):
    for c in cols:
        _first_bad(path, (df[c] == "").to_numpy(), f"empty {c}")


def _check_unique(path: Path, df: pd.DataFrame, key: list[str]):
    dup = df.duplicated(subset=key, keep="first").to_numpy()
    if dup.any():
        line = int(np.flatnonzero(dup)[0]) + 2
        raise DuplicateKey(f"{path.name}:{line}: duplicate key {tuple(df.iloc[line - 2][key])}")


def _check_refs(path: Path, values: pd.Series, known: set, what: str):
    unknown = ~values.isin(known).to_numpy()
    if unknown.any():
        i = int(np.flatnonzero(unknown)[0])
        raise UnknownReference(f"{path.name}:{i + 2}: unknown {what} {values.iloc[i]!r}")


def ingest(directory, log_returns: bool = False) -> TradePanel:
    """Read and validate a CSV bundle into a :class:`TradePanel`."""
    directory = Path(directory)
    frames = {key: _read(directory, key) for key in FILES}

    path, stocks = frames["stocks"]
    _check_ids(path, stocks, ["stock_id"])
    caps = _parse_amount(path, stocks["market_cap"], "market_cap", positive=True)
    _check_unique(path, stocks, ["stock_id"])

    path, members = frames["members"]
    _check_ids(path, members, ["member_id"])
    _first_bad(path, ~members["domicile"].isin(["D", "F"]).to_numpy(), "domicile must be D or F")
    _check_unique(path, members, ["member_id"])

    stock_set, member_set = set(stocks["stock_id"]), set(members["member_id"])

    path, trades = frames["trades"]
    _check_ids(path, trades, ["stock_id", "member_id"])
    t_dates = _parse_dates(path, trades["date"])
    t_buy = _parse_amount(path, trades["buy_amount"], "buy_amount")
    t_sell = _parse_amount(path, trades["sell_amount"], "sell_amount")
    _check_unique(path, trades, ["date", "stock_id", "member_id"])
    _check_refs(path, trades["stock_id"], stock_set, "stock")
    _check_refs(path, trades["member_id"], member_set, "member")

    path, flows = frames["flows"]
    _check_ids(path, flows, ["stock_id"])
    f_dates = _parse_dates(path, flows["date"])
    _first_bad(path, ~flows["investor_type"].isin([t.value for t in INVESTOR_TYPES]).to_numpy(),
               "investor_type must be IND, INS or FRG")
    f_buy = _parse_amount(path, flows["buy_amount"], "buy_amount")
    f_sell = _parse_amount(path, flows["sell_amount"], "sell_amount")
    _check_unique(path, flows, ["date", "stock_id", "investor_type"])
    _check_refs(path, flows["stock_id"], stock_set, "stock")

    path, prices = frames["prices"]
    _check_ids(path, prices, ["stock_id"])
    p_dates = _parse_dates(path, prices["date"])
    p_close = _to_float(prices["close"])
    _first_bad(path, ~np.isfinite(p_close), "close is not a finite number")
    if (p_close <= 0).any():
        line = int(np.flatnonzero(p_close <= 0)[0]) + 2
        raise NonPositivePrice(f"{path.name}:{line}: close must be positive")
    _check_unique(path, prices, ["date", "stock_id"])
    _check_refs(path, prices["stock_id"], stock_set, "stock")

    stock_ids = sorted(stock_set)
    member_ids = sorted(member_set)
    dates = np.unique(np.concatenate([t_dates, f_dates, p_dates]))
    sidx = {s: i for i, s in enumerate(stock_ids)}
    midx = {m: i for i, m in enumerate(member_ids)}
    m, s, t = len(member_ids), len(stock_ids), dates.size

    mb, ms, mp = np.zeros((m, s, t)), np.zeros((m, s, t)), np.zeros((m, s, t), dtype=bool)
    ti = (trades["member_id"].map(midx).to_numpy(), trades["stock_id"].map(sidx).to_numpy(),
          np.searchsorted(dates, t_dates))
    mb[ti], ms[ti], mp[ti] = t_buy, t_sell, True

    fb, fs, fp = np.zeros((3, s, t)), np.zeros((3, s, t)), np.zeros((3, s, t), dtype=bool)
    kidx = {ty.value: k for k, ty in enumerate(INVESTOR_TYPES)}
    fi = (flows["investor_type"].map(kidx).to_numpy(), flows["stock_id"].map(sidx).to_numpy(),
          np.searchsorted(dates, f_dates))
    fb[fi], fs[fi], fp[fi] = f_buy, f_sell, True

    close = np.full((s, t), np.nan)
    close[prices["stock_id"].map(sidx).to_numpy(), np.searchsorted(dates, p_dates)] = p_close

    cap = np.zeros(s)
    cap[stocks["stock_id"].map(sidx).to_numpy()] = caps

    name_of = dict(zip(members["member_id"], members["name"]))
    dom_of = dict(zip(members["member_id"], members["domicile"]))
    metas = []
    for j, mid in enumerate(member_ids):
        days = np.flatnonzero(mp[j].any(axis=0))
        first = dates[days[0]] if days.size else None
        last = dates[days[-1]] if days.size else None
        metas.append(MemberMeta(mid, name_of[mid], Domicile(dom_of[mid]), first, last))

    warnings = tuple(_consistency_warnings(mb, ms, fb, fs))
    for w in warnings:
        log.warning(w)
    return TradePanel(dates, tuple(stock_ids), tuple(member_ids), mb, ms, mp, fb, fs, fp,
                      close, cap, tuple(metas), log_returns=log_returns, warnings=warnings)


def _consistency_warnings(mb, ms, fb, fs) -> list[str]:
    out = []
    for side, member_amt, type_amt in (("buy", mb, fb), ("sell", ms, fs)):
        a, b = member_amt.sum(axis=0), type_amt.sum(axis=0)
        scale = np.maximum(np.abs(a), np.abs(b))
        bad = np.abs(a - b) > CONSISTENCY_RTOL * np.where(scale > 0, scale, 1.0)
        if bad.any():
            out.append(f"member and investor-type {side} totals disagree on {int(bad.sum())} stock-days")
    return out


def consistency_check(panel: TradePanel) -> list[str]:
    """Warnings for stock-days where member totals and investor-type totals disagree."""
    return _consistency_warnings(panel.member_buy, panel.member_sell, panel.flow_buy, panel.flow_sell)


def _fmt(values: np.ndarray) -> list[str]:
    return [repr(float(v)) for v in values]


def write_bundle(panel: TradePanel, directory) -> Path:
    """Export a panel as the five-file CSV bundle accepted by :func:`ingest`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    date_str = np.datetime_as_string(panel.dates, unit="D")
    sid = np.array(panel.stock_ids, dtype=object)
    mid = np.array(panel.member_ids, dtype=object)

    # rows ordered by (date, stock, entity)
    j, s, t = np.nonzero(panel.member_present)
    order = np.lexsort((j, s, t))
    j, s, t = j[order], s[order], t[order]
    pd.DataFrame({
        "date": date_str[t], "stock_id": sid[s], "member_id": mid[j],
        "buy_amount": _fmt(panel.member_buy[j, s, t]), "sell_amount": _fmt(panel.member_sell[j, s, t]),
    }).to_csv(directory / "trades.csv", index=False)

    k, s, t = np.nonzero(panel.flow_present)
    order = np.lexsort((k, s, t))
    k, s, t = k[order], s[order], t[order]
    codes = np.array([ty.value for ty in INVESTOR_TYPES], dtype=object)
    pd.DataFrame({
        "date": date_str[t], "stock_id": sid[s], "investor_type": codes[k],
        "buy_amount": _fmt(panel.flow_buy[k, s, t]), "sell_amount": _fmt(panel.flow_sell[k, s, t]),
    }).to_csv(directory / "investor_flows.csv", index=False)

    s, t = np.nonzero(~np.isnan(panel.close))
    order = np.lexsort((s, t))
    s, t = s[order], t[order]
    pd.DataFrame({"date": date_str[t], "stock_id": sid[s], "close": _fmt(panel.close[s, t])}).to_csv(
        directory / "prices.csv", index=False)

    pd.DataFrame({"stock_id": sid, "market_cap": _fmt(panel.market_cap)}).to_csv(
        directory / "stocks.csv", index=False)
    pd.DataFrame({
        "member_id": mid,
        "name": [m.name for m in panel.members],
        "domicile": [m.domicile.value for m in panel.members],
    }).to_csv(directory / "members.csv", index=False)
    return directory


def panel_from_records(
    trades: Iterable[TradeRecord],
    flows: Iterable[InvestorFlowRecord],
    closes: Mapping[tuple[str, str], float],
    caps: Mapping[str, float],
    members: Iterable[MemberMeta],
    log_returns: bool = False,
) -> TradePanel:
    """Build a panel from record objects; ``closes`` maps (ISO date, stock_id) to close."""
    trades, flows, members = list(trades), list(flows), list(members)
    dates = sorted({np.datetime64(r.date, "D") for r in trades}
                   | {np.datetime64(r.date, "D") for r in flows}
                   | {np.datetime64(d, "D") for d, _ in closes})
    dates = np.array(dates, dtype="datetime64[D]")
    stock_ids = sorted(caps)
    meta_by_id = {m.member_id: m for m in members}
    member_ids = sorted(meta_by_id)
    tidx = {d: i for i, d in enumerate(dates.tolist())}
    sidx = {s: i for i, s in enumerate(stock_ids)}
    midx = {m: i for i, m in enumerate(member_ids)}
    m, s, t = len(member_ids), len(stock_ids), dates.size
    mb, ms, mp = np.zeros((m, s, t)), np.zeros((m, s, t)), np.zeros((m, s, t), dtype=bool)
    for r in trades:
        key = (midx[r.member_id], sidx[r.stock_id], tidx[np.datetime64(r.date, "D").tolist()])
        if mp[key]:
            raise DuplicateKey(f"duplicate trade {(r.date, r.stock_id, r.member_id)}")
        mb[key], ms[key], mp[key] = r.buy_amount, r.sell_amount, True
    fb, fs, fp = np.zeros((3, s, t)), np.zeros((3, s, t)), np.zeros((3, s, t), dtype=bool)
    for r in flows:
        key = (INVESTOR_TYPES.index(InvestorType(r.investor_type)), sidx[r.stock_id],
               tidx[np.datetime64(r.date, "D").tolist()])
        if fp[key]:
            raise DuplicateKey(f"duplicate flow {(r.date, r.stock_id, r.investor_type)}")
        fb[key], fs[key], fp[key] = r.buy_amount, r.sell_amount, True
    close = np.full((s, t), np.nan)
    for (d, sid), c in closes.items():
        close[sidx[sid], tidx[np.datetime64(d, "D").tolist()]] = c
    metas = []
    for j, mid in enumerate(member_ids):
        days = np.flatnonzero(mp[j].any(axis=0))
        meta = meta_by_id[mid]
        metas.append(MemberMeta(mid, meta.name, Domicile(meta.domicile),
                                dates[days[0]] if days.size else None,
                                dates[days[-1]] if days.size else None))
    cap = np.array([caps[sid] for sid in stock_ids], dtype=float)
    return TradePanel(dates, tuple(stock_ids), tuple(member_ids), mb, ms, mp, fb, fs, fp,
                      close, cap, tuple(metas), log_returns=log_returns,
                      warnings=tuple(_consistency_warnings(mb, ms, fb, fs)))
