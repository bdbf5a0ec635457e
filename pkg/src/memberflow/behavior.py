"""Directionality and trend measures, and member classification by investor-type correlation."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from memberflow.errors import MemberFlowError
from memberflow.panel import INVESTOR_TYPES, Domicile, InvestorType, TradePanel
from memberflow.stats import rowwise_pearson

DEFAULT_THETA = 0.2
MIN_OVERLAP = 30
MIN_VOLUME_RATIO = 0.1


class BehaviorError(MemberFlowError, ValueError):
    module = "behavior"


class NoActivity(BehaviorError):
    pass


class InsufficientHistory(BehaviorError):
    pass


class MemberClass(str, Enum):
    DIM = "DIM"
    DSM = "DSM"
    FRM = "FRM"
    EXCLUDED = "Excluded"


@dataclass(frozen=True)
class BehaviorScore:
    entity: str
    decile: int
    year: int | None
    directionality: float
    trend: float
    n_stocks: int


@dataclass(frozen=True)
class MemberProfile:
    member_id: str
    corr_individual: float
    corr_institution: float
    corr_foreigner: float
    domicile: Domicile
    volume: float
    member_class: MemberClass | None = None


def _entity_name(entity) -> str:
    return entity.value if isinstance(entity, InvestorType) else str(entity)


def _slice(panel: TradePanel, entity, decile: int, year: int | None):
    stocks = panel.decile_stocks(decile)
    days = panel.year_mask(year)
    buy, sell, present = panel.entity_arrays(entity)
    sub = np.ix_(stocks, np.flatnonzero(days))
    return stocks, buy[sub], sell[sub], present[sub], panel.returns[sub]


def stock_directionality(buy, sell, active, theta: float = DEFAULT_THETA) -> np.ndarray:
    """Per-row fraction of usable days whose one-way ratio |B-S|/(B+S) reaches ``theta``.

    Days with B+S = 0 or flagged inactive are not counted; rows without any
    usable day give NaN.
    """
    buy = np.atleast_2d(np.asarray(buy, dtype=float))
    sell = np.atleast_2d(np.asarray(sell, dtype=float))
    gross = buy + sell
    usable = np.atleast_2d(np.asarray(active, bool)) & (gross > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.abs(buy - sell) / np.where(usable, gross, 1.0)
    hits = (usable & (ratio >= theta)).sum(axis=1)
    n = usable.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, hits / np.maximum(n, 1), np.nan)


def directionality(panel: TradePanel, entity, decile: int, year: int | None,
                   theta: float = DEFAULT_THETA) -> float:
    if not 0 < theta < 1:
        raise BehaviorError(f"theta must lie in (0, 1), got {theta}")
    _, buy, sell, present, _ = _slice(panel, entity, decile, year)
    per_stock = stock_directionality(buy, sell, present, theta)
    if np.isnan(per_stock).all():
        raise NoActivity(f"{_entity_name(entity)} has no activity in decile {decile}, year {year}")
    return float(np.nanmean(per_stock))


def stock_trend(x, r, active, min_overlap: int = MIN_OVERLAP) -> np.ndarray:
    """Per-row Pearson correlation of net flow with return over active days (NaN if unusable)."""
    return rowwise_pearson(x, r, active, min_overlap=min_overlap)


def trend(panel: TradePanel, entity, decile: int, year: int | None,
          min_overlap: int = MIN_OVERLAP) -> float:
    _, buy, sell, present, ret = _slice(panel, entity, decile, year)
    per_stock = stock_trend(buy - sell, ret, present, min_overlap)
    if np.isnan(per_stock).all():
        raise NoActivity(f"{_entity_name(entity)} has no usable trend history in decile {decile}, year {year}")
    return float(np.nanmean(per_stock))


def behavior_score(panel: TradePanel, entity, decile: int, year: int | None,
                   theta: float = DEFAULT_THETA, min_overlap: int = MIN_OVERLAP) -> BehaviorScore:
    """D and T averaged over the same stock set: stocks where the trend is defined."""
    _, buy, sell, present, ret = _slice(panel, entity, decile, year)
    d = stock_directionality(buy, sell, present, theta)
    t = stock_trend(buy - sell, ret, present, min_overlap)
    ok = ~np.isnan(d) & ~np.isnan(t)
    if not ok.any():
        raise NoActivity(f"{_entity_name(entity)} has no usable history in decile {decile}, year {year}")
    return BehaviorScore(_entity_name(entity), decile, year, float(d[ok].mean()),
                         float(t[ok].mean()), int(ok.sum()))


def behavior_scores(panel: TradePanel, entities, deciles, years,
                    theta: float = DEFAULT_THETA, min_overlap: int = MIN_OVERLAP) -> list[BehaviorScore]:
    """Scores for every (entity, decile, year) combination that has usable history."""
    out = []
    for entity in entities:
        for decile in deciles:
            for year in years:
                try:
                    out.append(behavior_score(panel, entity, decile, year, theta, min_overlap))
                except NoActivity:
                    continue
    return out


def member_type_correlations(panel: TradePanel, member_id: str, decile: int = 1,
                             year: int | None = None, min_overlap: int = MIN_OVERLAP):
    """Mean correlation of the member's net flow with each investor type's net flow.

    Correlations are taken per (stock, year) over days both are active and then
    averaged; returns ``(corr_individual, corr_institution, corr_foreigner)``.
    """
    j = panel.member_index(member_id)
    stocks = panel.decile_stocks(decile)
    years = panel.year_list if year is None else [year]
    mx = panel.member_buy[j] - panel.member_sell[j]
    mp = panel.member_present[j]
    per_type = [[] for _ in INVESTOR_TYPES]
    for y in years:
        cols = np.flatnonzero(panel.year_mask(y))
        sub = np.ix_(stocks, cols)
        for k in range(len(INVESTOR_TYPES)):
            tx = panel.flow_buy[k][sub] - panel.flow_sell[k][sub]
            r = rowwise_pearson(mx[sub], tx, mp[sub] & panel.flow_present[k][sub], min_overlap)
            per_type[k].append(r)
    means = []
    for k, chunks in enumerate(per_type):
        vals = np.concatenate(chunks) if chunks else np.array([])
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            raise InsufficientHistory(
                f"member {member_id} lacks {min_overlap} overlapping days with "
                f"{INVESTOR_TYPES[k].value} flows in decile {decile}")
        means.append(float(vals.mean()))
    return tuple(means)


def member_profiles(panel: TradePanel, decile: int = 1, year: int | None = None,
                    min_overlap: int = MIN_OVERLAP) -> list[MemberProfile]:
    """Profiles for every member; members without enough history get NaN correlations."""
    stocks = panel.decile_stocks(decile)
    volumes = panel.member_volume(stocks, year)
    out = []
    for j, meta in enumerate(panel.members):
        try:
            ci, cs, cf = member_type_correlations(panel, meta.member_id, decile, year, min_overlap)
        except InsufficientHistory:
            ci = cs = cf = float("nan")
        out.append(MemberProfile(meta.member_id, ci, cs, cf, meta.domicile, float(volumes[j])))
    return out


def classify_members(profiles, min_volume_ratio: float = MIN_VOLUME_RATIO) -> dict[str, MemberClass]:
    """Assign DIM/DSM/FRM, or Excluded for low-volume or correlation-less members."""
    profiles = list(profiles)
    if not profiles:
        return {}
    mean_volume = float(np.mean([p.volume for p in profiles]))
    out = {}
    for p in profiles:
        corrs = (p.corr_individual, p.corr_institution, p.corr_foreigner)
        if p.volume < min_volume_ratio * mean_volume or any(np.isnan(c) for c in corrs):
            out[p.member_id] = MemberClass.EXCLUDED
        elif Domicile(p.domicile) is Domicile.FOREIGN:
            out[p.member_id] = MemberClass.FRM
        elif p.corr_individual >= p.corr_institution:
            out[p.member_id] = MemberClass.DIM
        else:
            out[p.member_id] = MemberClass.DSM
    return out


def classified_profiles(panel: TradePanel, decile: int = 1, year: int | None = None,
                        min_volume_ratio: float = MIN_VOLUME_RATIO,
                        min_overlap: int = MIN_OVERLAP) -> list[MemberProfile]:
    profiles = member_profiles(panel, decile, year, min_overlap)
    labels = classify_members(profiles, min_volume_ratio)
    return [MemberProfile(p.member_id, p.corr_individual, p.corr_institution, p.corr_foreigner,
                          p.domicile, p.volume, labels[p.member_id]) for p in profiles]
