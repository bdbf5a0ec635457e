"""Random-matrix analysis of member inventory-variation correlation matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from memberflow import workers
from memberflow.errors import MemberFlowError
from memberflow.panel import TradePanel
from memberflow.stats import correlation_matrix, pearson, symmetric_eigen

MIN_MEMBERS = 10
MIN_ACTIVE_DAYS = 60
STANDARDIZED = "standardized"
RAW = "raw"


class SpectralError(MemberFlowError, ValueError):
    module = "spectral"


class NonPositiveQ(SpectralError):
    pass


class InsufficientMembers(SpectralError):
    pass


class InsufficientCoverage(SpectralError):
    pass


class ZeroVariance(SpectralError):
    pass


@dataclass(frozen=True)
class MpBounds:
    q: float
    sigma2: float
    lambda_min: float
    lambda_max: float


@dataclass(frozen=True, eq=False)
class SpectralReport:
    stock_id: str
    year: int
    member_ids: tuple[str, ...]
    n_days: int
    eigenvalues: np.ndarray
    bounds: MpBounds
    leading_vector: np.ndarray
    orientation: int
    dates: np.ndarray
    factor: np.ndarray
    factor_return_corr: float

    @property
    def n_members(self) -> int:
        return len(self.member_ids)


@dataclass(frozen=True)
class DecileSummary:
    decile: int
    n_stocks: int
    n_reports: int
    mean_lambda1: float
    mean_abs_factor_corr: float


def mp_bounds(q: float, sigma2: float = 1.0) -> MpBounds:
    """Edges of the Marchenko-Pastur spectrum for aspect ratio Q = T/N."""
    if not q > 0:
        raise NonPositiveQ(f"Q must be positive, got {q}")
    if math.isinf(q):
        return MpBounds(q, sigma2, sigma2, sigma2)
    r = 1.0 / q
    return MpBounds(q, sigma2, sigma2 * (1 + r - 2 * math.sqrt(r)), sigma2 * (1 + r + 2 * math.sqrt(r)))


def mp_density(lam, bounds: MpBounds):
    lam = np.asarray(lam, dtype=float)
    inside = (lam > bounds.lambda_min) & (lam < bounds.lambda_max) & (lam > 0)
    safe = np.where(inside, lam, 1.0)
    val = (bounds.q / (2 * math.pi * bounds.sigma2)
           * np.sqrt(np.clip((bounds.lambda_max - safe) * (safe - bounds.lambda_min), 0, None)) / safe)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def mp_cdf(lam, bounds: MpBounds):
    """Cumulative MP distribution by adaptive quadrature of :func:`mp_density`."""
    def one(x: float) -> float:
        if x <= bounds.lambda_min:
            return 0.0
        hi = min(x, bounds.lambda_max)
        val, _ = integrate.quad(lambda t: mp_density(t, bounds), bounds.lambda_min, hi, limit=200)
        return min(1.0, val)
    lam = np.asarray(lam, dtype=float)
    out = np.vectorize(one, otypes=[float])(lam)
    return float(out) if out.ndim == 0 else out


def kolmogorov_distance(eigenvalues, bounds: MpBounds) -> float:
    """Sup distance between the empirical eigenvalue CDF and the MP CDF."""
    ev = np.sort(np.asarray(eigenvalues, dtype=float))
    n = ev.size
    cdf = mp_cdf(ev, bounds)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


def standardized_panel(x: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Standardise each row over its active days, put zeros on inactive days, then
    re-standardise over all days so the resulting rows have unit variance."""
    x = np.where(active, x, 0.0)
    cnt = active.sum(axis=1, keepdims=True)
    mu = x.sum(axis=1, keepdims=True) / cnt
    dev = np.where(active, x - mu, 0.0)
    sd = np.sqrt((dev * dev).sum(axis=1, keepdims=True) / cnt)
    if (sd <= 0).any():
        raise ZeroVariance("a member's inventory variation is constant over its active days")
    z = dev / sd
    z = z - z.mean(axis=1, keepdims=True)
    return z / z.std(axis=1, keepdims=True)


def spectrum_from_series(series: np.ndarray, active: np.ndarray | None = None):
    """Eigen-decomposition of the correlation matrix of member rows."""
    active = np.ones(series.shape, bool) if active is None else active
    z = standardized_panel(series, active)
    c = correlation_matrix(z)
    vals, vecs = symmetric_eigen(c)
    return z, vals, vecs


def spectral_report(panel: TradePanel, stock_id: str, year: int, factor_form: str = STANDARDIZED,
                    min_members: int = MIN_MEMBERS, min_active_days: int = MIN_ACTIVE_DAYS) -> SpectralReport:
    if factor_form not in (STANDARDIZED, RAW):
        raise SpectralError(f"unknown factor form {factor_form!r}")
    s = panel.stock_index(stock_id)
    cols = np.flatnonzero(panel.year_mask(year))
    present = panel.member_present[:, s, cols]
    net = panel.member_buy[:, s, cols] - panel.member_sell[:, s, cols]
    gross_var = np.array([np.var(net[j, present[j]]) if present[j].sum() > 1 else 0.0
                          for j in range(panel.n_members)])
    eligible = np.flatnonzero((present.sum(axis=1) >= min_active_days) & (gross_var > 0))
    if eligible.size < min_members:
        raise InsufficientMembers(
            f"{stock_id}/{year}: {eligible.size} members with >= {min_active_days} active days, need {min_members}")
    x, act = net[eligible], present[eligible]
    z, vals, vecs = spectrum_from_series(x, act)
    u = vecs[:, 0]
    ret = panel.returns[s, cols]
    basis = z if factor_form == STANDARDIZED else np.where(act, x, 0.0)
    factor = u @ basis
    ok = np.isfinite(ret)
    try:
        corr = pearson(factor[ok], ret[ok])
    except Exception as exc:
        raise ZeroVariance(f"{stock_id}/{year}: {exc}") from None
    orientation = 1
    if corr < 0:
        orientation, u, factor, corr = -1, -u, -factor, -corr
    return SpectralReport(stock_id, int(year), tuple(panel.member_ids[j] for j in eligible), cols.size,
                          vals, mp_bounds(cols.size / eligible.size), u, orientation,
                          panel.dates[cols], factor, corr)


def spectral_reports(panel: TradePanel, year: int | None = None, decile: int | None = None,
                     factor_form: str = STANDARDIZED, **kwargs):
    """Reports for every (stock, year), with a list of skipped entries and reasons.

    Work fans out over a bounded pool; results are ordered by (stock, year).
    """
    stocks = range(panel.n_stocks) if decile is None else panel.decile_stocks(decile)
    years = panel.year_list if year is None else [year]
    tasks = [(panel.stock_ids[s], y) for s in stocks for y in years]

    def run(task):
        try:
            return spectral_report(panel, task[0], task[1], factor_form, **kwargs)
        except (InsufficientMembers, ZeroVariance) as exc:
            return exc

    reports, skipped = [], []
    for task, res in zip(tasks, workers.pmap(run, tasks)):
        if isinstance(res, SpectralError):
            skipped.append({"stock_id": task[0], "year": task[1], "reason": str(res)})
        else:
            reports.append(res)
    return reports, skipped


def decile_spectral_summary(panel: TradePanel, year: int | None = None, reports=None,
                            factor_form: str = STANDARDIZED, **kwargs) -> list[DecileSummary]:
    """Per-decile mean leading eigenvalue and mean |factor-return correlation|.

    Deciles where reports cover fewer than half the stocks are omitted; if no
    decile qualifies, :class:`InsufficientCoverage` is raised.
    """
    if reports is None:
        reports, _ = spectral_reports(panel, year, factor_form=factor_form, **kwargs)
    elif year is not None:
        reports = [r for r in reports if r.year == year]
    n_years = 1 if year is not None else len(panel.year_list)
    by_decile: dict[int, list[SpectralReport]] = {}
    for r in reports:
        by_decile.setdefault(int(panel.decile[panel.stock_index(r.stock_id)]), []).append(r)
    out = []
    for d in sorted(set(panel.decile.tolist()) - {0}):
        rs = by_decile.get(d, [])
        n_stocks = panel.decile_stocks(d).size
        if not rs or len(rs) < 0.5 * n_stocks * n_years:
            continue
        out.append(DecileSummary(d, n_stocks, len(rs), float(np.mean([r.eigenvalues[0] for r in rs])),
                                 float(np.mean([abs(r.factor_return_corr) for r in rs]))))
    if not out:
        raise InsufficientCoverage("no decile has spectral reports for at least half its stocks")
    return out
