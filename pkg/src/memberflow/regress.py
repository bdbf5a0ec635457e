"""Pooled cross-sectional regression of excess returns on the market and group herding."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from memberflow.errors import MemberFlowError
from memberflow.herding import HerdingPanel
from memberflow.panel import TradePanel
from memberflow.stats import RankDeficient as _StatsRankDeficient
from memberflow.stats import ols

TRADING_DAYS = 247
HERDING_COLUMNS = ("H_DSM", "H_DIM", "H_FRM")
Z_95 = 1.96


class RegressionError(MemberFlowError, ValueError):
    module = "regress"


class EmptyAssembly(RegressionError):
    pass


class MissingRiskFree(RegressionError):
    pass


class RankDeficient(RegressionError):
    pass


@dataclass(frozen=True)
class RegressionSpec:
    herding_columns: tuple[str, ...] = HERDING_COLUMNS
    base_year: int | None = None
    dummy_all_years: bool = False


@dataclass(frozen=True, eq=False)
class Design:
    matrix: np.ndarray
    target: np.ndarray
    columns: tuple[str, ...]
    row_stock: np.ndarray
    row_day: np.ndarray
    dropped: int


@dataclass(frozen=True)
class CoefficientRow:
    name: str
    coef: float
    std_err: float
    t: float
    p: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class RegressionResult:
    rows: tuple[CoefficientRow, ...]
    r_squared: float
    adj_r_squared: float
    n_obs: int
    dropped: int = 0
    extra: dict = field(default_factory=dict)

    def coef(self, name: str) -> float:
        for r in self.rows:
            if r.name == name:
                return r.coef
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            "dependent": "excess_return",
            "method": "OLS",
            "r_squared": self.r_squared,
            "adj_r_squared": self.adj_r_squared,
            "n_observations": self.n_obs,
            "dropped_rows": self.dropped,
            "coefficients": [r.__dict__.copy() for r in self.rows],
            **self.extra,
        }

    def to_text(self) -> str:
        lines = [
            f"{'Dep. Variable:':<20}{'excess returns':>16}   {'R-squared:':<16}{self.r_squared:>10.3f}",
            f"{'Model:':<20}{'OLS':>16}   {'Adj. R-squared:':<16}{self.adj_r_squared:>10.3f}",
            f"{'Method:':<20}{'Least Squares':>16}   {'No. Observations:':<16}{self.n_obs:>10d}",
            "",
            f"{'':<18}{'coef':>11}{'std err':>11}{'t':>10}{'P>|z|':>9}{'[0.025':>11}{'0.975]':>11}",
            "-" * 81,
        ]
        for r in self.rows:
            lines.append(f"{r.name:<18}{r.coef:>11.4g}{r.std_err:>11.3g}{r.t:>10.3f}{r.p:>9.3f}"
                         f"{r.ci_low:>11.3g}{r.ci_high:>11.3g}")
        return "\n".join(lines) + "\n"


def market_proxy(panel: TradePanel, decile: int = 1) -> np.ndarray:
    """Cap-weighted mean return of the decile's stocks, per day (NaN if none has a return)."""
    stocks = panel.decile_stocks(decile) if panel.decile.any() else np.arange(panel.n_stocks)
    ret = panel.returns[stocks]
    w = np.where(np.isfinite(ret), panel.market_cap[stocks, None], 0.0)
    tot = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, (np.nan_to_num(ret) * w).sum(axis=0) / np.where(tot > 0, tot, 1), np.nan)


def riskfree_daily(annual_yield) -> np.ndarray:
    return np.asarray(annual_yield, dtype=float) / TRADING_DAYS


def load_series(path, panel: TradePanel, column: str) -> np.ndarray:
    """Read a ``date,<column>`` CSV and align it to the panel calendar (NaN where absent)."""
    df = pd.read_csv(path, dtype={"date": str}, float_precision="round_trip")
    if "date" not in df.columns or column not in df.columns:
        raise RegressionError(f"{path}: expected columns date,{column}")
    dates = pd.to_datetime(df["date"], format="%Y-%m-%d").to_numpy().astype("datetime64[D]")
    out = np.full(panel.n_days, np.nan)
    pos = np.searchsorted(panel.dates, dates)
    ok = (pos < panel.n_days) & (panel.dates[np.minimum(pos, panel.n_days - 1)] == dates)
    out[pos[ok]] = df[column].to_numpy(dtype=float)[ok]
    return out


def herding_grid(hp: HerdingPanel, panel: TradePanel) -> np.ndarray:
    """Place a herding panel's H values on the full (stock, day) grid; NaN where not covered."""
    grid = np.full((panel.n_stocks, panel.n_days), np.nan)
    rows = np.array([panel.stock_index(s) for s in hp.stock_ids], dtype=int)
    cols = np.searchsorted(panel.dates, hp.dates)
    grid[np.ix_(rows, cols)] = hp.H
    return grid


def _as_grid(h, panel: TradePanel) -> np.ndarray:
    if isinstance(h, HerdingPanel):
        return herding_grid(h, panel)
    h = np.asarray(h, dtype=float)
    if h.shape != (panel.n_stocks, panel.n_days):
        raise RegressionError(f"herding grid shape {h.shape} != {(panel.n_stocks, panel.n_days)}")
    return h


def assemble_design(panel: TradePanel, herding: Mapping[str, object], market, riskfree,
                    spec: RegressionSpec = RegressionSpec(), stocks: Sequence[int] | None = None) -> Design:
    """Stack one row per (stock, day) with every regressor present, plus year dummies."""
    if riskfree is None:
        raise MissingRiskFree("a risk-free series is required")
    rf = np.broadcast_to(np.asarray(riskfree, dtype=float), (panel.n_days,))
    if not np.isfinite(rf).any():
        raise MissingRiskFree("risk-free series has no values on the panel calendar")
    mkt = np.asarray(market, dtype=float)
    if mkt.shape != (panel.n_days,):
        raise RegressionError(f"market series has shape {mkt.shape}, expected ({panel.n_days},)")
    grids = []
    for name in spec.herding_columns:
        if name not in herding:
            raise RegressionError(f"missing herding regressor {name}")
        grids.append(_as_grid(herding[name], panel))
    stocks = np.arange(panel.n_stocks) if stocks is None else np.asarray(stocks, dtype=int)

    ret = panel.returns[stocks]
    ok = np.isfinite(ret) & np.isfinite(mkt)[None, :] & np.isfinite(rf)[None, :]
    for g in grids:
        ok &= np.isfinite(g[stocks])
    dropped = int(ok.size - ok.sum())
    si, ti = np.nonzero(ok)
    if si.size == 0:
        raise EmptyAssembly("no (stock, day) row has every regressor present")
    y = ret[si, ti] - rf[ti]
    years = panel.years[ti]
    uniq = sorted(set(years.tolist()))
    base = uniq[0] if spec.base_year is None else spec.base_year
    dummy_years = uniq if spec.dummy_all_years else [yr for yr in uniq if yr != base]
    cols = [np.ones(si.size)]
    names = ["alpha"]
    for yr in dummy_years:
        cols.append((years == yr).astype(float))
        names.append(f"C(year)[T.{yr}]")
    cols.append(mkt[ti] - rf[ti])
    names.append("Market")
    for name, g in zip(spec.herding_columns, grids):
        cols.append(g[stocks][si, ti])
        names.append(name)
    return Design(np.column_stack(cols), y, tuple(names), stocks[si], ti, dropped)


def fit_design(design: Design) -> RegressionResult:
    try:
        fit = ols(design.matrix, design.target)
    except _StatsRankDeficient as exc:
        raise RankDeficient(str(exc)) from None
    rows = tuple(
        CoefficientRow(name, float(c), float(se), float(t), float(p), float(c - Z_95 * se), float(c + Z_95 * se))
        for name, c, se, t, p in zip(design.columns, fit.coefficients, fit.std_errors, fit.t_stats, fit.p_values)
    )
    return RegressionResult(rows, float(fit.r_squared), float(fit.adj_r_squared), fit.n_obs, design.dropped)


def run_regression(panel: TradePanel, herding: Mapping[str, object], market, riskfree,
                   spec: RegressionSpec = RegressionSpec()) -> RegressionResult:
    return fit_design(assemble_design(panel, herding, market, riskfree, spec))


def r2_delta(panel: TradePanel, herding: Mapping[str, object], market, riskfree,
             spec: RegressionSpec = RegressionSpec()) -> tuple[float, float]:
    """R-squared of the market-only model and of the full model, on identical rows."""
    full = assemble_design(panel, herding, market, riskfree, spec)
    k = len(spec.herding_columns)
    reduced = Design(full.matrix[:, : full.matrix.shape[1] - k], full.target, full.columns[:-k] if k else full.columns,
                     full.row_stock, full.row_day, full.dropped)
    r2_small, r2_full = fit_design(reduced).r_squared, fit_design(full).r_squared
    # nested least squares: any shortfall is rounding
    return r2_small, max(r2_full, r2_small)
