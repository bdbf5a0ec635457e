"""Binomial-null herding indicators and herding direction per member group."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterator, Mapping

import numpy as np

from memberflow.behavior import MemberClass
from memberflow.errors import MemberFlowError
from memberflow.panel import TradePanel
from memberflow.stats import ZeroVariance, pearson

DEFAULT_ALPHA = 0.05
MIN_TRADERS = 5
PMF_RULE = "pmf"
TAIL_RULE = "tail"


class HerdingError(MemberFlowError, ValueError):
    module = "herding"


class OutOfRange(HerdingError):
    pass


class NoTraders(HerdingError):
    pass


class EmptyGroup(HerdingError):
    pass


class HerdGroup(str, Enum):
    ALL = "All"
    DIM = "DIM"
    DSM = "DSM"
    FRM = "FRM"


@dataclass(frozen=True)
class HerdingDay:
    stock_id: str
    date: np.datetime64
    n_buyers: int
    n_sellers: int
    h: int
    H: int
    group: HerdGroup


@dataclass(frozen=True)
class HerdingDirection:
    stock_id: str
    year: int
    group: HerdGroup
    dh: float


def binom_pmf(k: int, n: int, p: float) -> float:
    """C(n,k) p^k (1-p)^(n-k), evaluated in log space."""
    if int(k) != k or int(n) != n or not 0 <= k <= n:
        raise OutOfRange(f"need integers 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 <= p <= 1.0:
        raise OutOfRange(f"p must lie in [0, 1], got {p}")
    k, n = int(k), int(n)
    if p == 0.0:
        return 1.0 if k == 0 else 0.0
    if p == 1.0:
        return 1.0 if k == n else 0.0
    log_c = math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
    return math.exp(log_c + k * math.log(p) + (n - k) * math.log1p(-p))


def _statistic(k: int, n: int, p: float, rule: str) -> float:
    if rule == PMF_RULE:
        return binom_pmf(k, n, p)
    if rule == TAIL_RULE:
        # two-sided exact test: total mass of outcomes no more likely than k
        ref = binom_pmf(k, n, p) * (1 + 1e-7)
        return min(1.0, sum(f for f in (binom_pmf(i, n, p) for i in range(n + 1)) if f <= ref))
    raise HerdingError(f"unknown herding rule {rule!r}")


def herding_day(n_buyers: int, n_sellers: int, alpha: float = DEFAULT_ALPHA,
                rule: str = PMF_RULE) -> tuple[int, int]:
    """(h, H) for one stock-day from buyer and seller counts under a fair-coin null."""
    if n_buyers < 0 or n_sellers < 0:
        raise OutOfRange("counts must be non-negative")
    n = n_buyers + n_sellers
    if n < 1:
        raise NoTraders("no buyers or sellers")
    h = int(_statistic(n_buyers, n, 0.5, rule) <= alpha)
    return h, h * int(np.sign(n_buyers - n_sellers))


@lru_cache(maxsize=64)
def _herd_table(n_max: int, alpha: float, rule: str) -> np.ndarray:
    """Boolean table t[n, k] = h for 1 <= n <= n_max, 0 <= k <= n."""
    table = np.zeros((n_max + 1, n_max + 1), dtype=bool)
    for n in range(1, n_max + 1):
        for k in range(n + 1):
            table[n, k] = _statistic(k, n, 0.5, rule) <= alpha
    table.setflags(write=False)
    return table


def null_herding_rate(n: int, alpha: float = DEFAULT_ALPHA, rule: str = PMF_RULE) -> float:
    """Exact probability that h = 1 when each of n members buys or sells by a fair coin."""
    if n < 1:
        raise NoTraders("n must be positive")
    return float(sum(binom_pmf(k, n, 0.5) for k in range(n + 1) if _statistic(k, n, 0.5, rule) <= alpha))


@dataclass(frozen=True, eq=False)
class HerdingPanel:
    """Signed herding over a (stock, day) grid for one member group.

    Days with fewer than ``min_traders`` buyers+sellers are marked invalid and
    carry h = H = 0.
    """

    group: HerdGroup
    stock_ids: tuple[str, ...]
    dates: np.ndarray
    n_buy: np.ndarray
    n_sell: np.ndarray
    h: np.ndarray
    H: np.ndarray
    valid: np.ndarray

    @property
    def skipped_days(self) -> int:
        return int((~self.valid).sum())

    def mean_h(self) -> float:
        if not self.valid.any():
            return float("nan")
        return float(self.h[self.valid].mean())

    def days(self) -> Iterator[HerdingDay]:
        for s, t in zip(*np.nonzero(self.valid)):
            yield HerdingDay(self.stock_ids[s], self.dates[t], int(self.n_buy[s, t]),
                             int(self.n_sell[s, t]), int(self.h[s, t]), int(self.H[s, t]), self.group)


def herding_counts(buy, sell, present) -> tuple[np.ndarray, np.ndarray]:
    """Number of net buyers and net sellers per (stock, day); members with buy = sell count for neither."""
    present = np.asarray(present, bool)
    buy = np.asarray(buy)
    sell = np.asarray(sell)
    n_buy = (present & (buy > sell)).sum(axis=0)
    n_sell = (present & (sell > buy)).sum(axis=0)
    return n_buy, n_sell


def herding_from_counts(n_buy, n_sell, alpha: float = DEFAULT_ALPHA, rule: str = PMF_RULE,
                        min_traders: int = MIN_TRADERS):
    n_buy = np.asarray(n_buy, dtype=int)
    n_sell = np.asarray(n_sell, dtype=int)
    n = n_buy + n_sell
    table = _herd_table(max(int(n.max(initial=0)), 1), float(alpha), rule)
    h = table[n, n_buy].astype(int)
    valid = n >= max(min_traders, 1)
    h = np.where(valid, h, 0)
    H = h * np.sign(n_buy - n_sell)
    return h, H.astype(int), valid


def group_members(panel: TradePanel, group: HerdGroup, classes: Mapping[str, MemberClass] | None) -> np.ndarray:
    group = HerdGroup(group)
    if group is HerdGroup.ALL:
        idx = np.arange(panel.n_members)
    else:
        if classes is None:
            raise EmptyGroup(f"group {group.value} needs member classes")
        idx = np.array([j for j, mid in enumerate(panel.member_ids)
                        if classes.get(mid) == MemberClass(group.value)], dtype=int)
    if idx.size == 0:
        raise EmptyGroup(f"group {group.value} has no members")
    return idx


def herding_panel(panel: TradePanel, group=HerdGroup.ALL, decile: int | None = None,
                  year: int | None = None, classes: Mapping[str, MemberClass] | None = None,
                  alpha: float = DEFAULT_ALPHA, rule: str = PMF_RULE,
                  min_traders: int = MIN_TRADERS) -> HerdingPanel:
    group = HerdGroup(group)
    members = group_members(panel, group, classes)
    stocks = np.arange(panel.n_stocks) if decile is None else panel.decile_stocks(decile)
    days = np.flatnonzero(panel.year_mask(year))
    sub = np.ix_(members, stocks, days)
    n_buy, n_sell = herding_counts(panel.member_buy[sub], panel.member_sell[sub], panel.member_present[sub])
    h, H, valid = herding_from_counts(n_buy, n_sell, alpha, rule, min_traders)
    return HerdingPanel(group, tuple(panel.stock_ids[s] for s in stocks), panel.dates[days],
                        n_buy, n_sell, h, H, valid)


def herding_direction(H, r) -> float:
    """Correlation between the signed herding series and returns."""
    return pearson(H, r)


def herding_directions(hp: HerdingPanel, panel: TradePanel) -> list[HerdingDirection]:
    """DH per stock and calendar year; series with zero variance are skipped."""
    cols = np.searchsorted(panel.dates, hp.dates)
    years = panel.years[cols]
    out = []
    for s, sid in enumerate(hp.stock_ids):
        ret = panel.returns[panel.stock_index(sid), cols]
        for y in sorted(set(years.tolist())):
            sel = (years == y) & np.isfinite(ret)
            if sel.sum() < 2:
                continue
            try:
                dh = herding_direction(hp.H[s, sel], ret[sel])
            except ZeroVariance:
                continue
            out.append(HerdingDirection(sid, int(y), hp.group, dh))
    return out


def mean_direction(directions) -> float:
    vals = [d.dh for d in directions]
    return float(np.mean(vals)) if vals else float("nan")
