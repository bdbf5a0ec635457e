"""Correlation, least-squares and symmetric eigen kernels."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from memberflow.errors import MemberFlowError

SYM_TOL = 1e-10


class StatsError(MemberFlowError, ValueError):
    module = "stats"


class ZeroVariance(StatsError):
    pass


class LengthMismatch(StatsError):
    pass


class RankDeficient(StatsError):
    pass


class RankDeficientControls(RankDeficient):
    pass


class DimensionMismatch(StatsError):
    pass


class NotSymmetric(StatsError):
    pass


class NotSquare(StatsError):
    pass


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"series shapes differ: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise LengthMismatch("need at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = dx @ dx
    syy = dy @ dy
    # relative cutoff: a series that is constant up to rounding is degenerate
    if sxx <= (1e-14 * max(np.abs(x).max(), 1e-300)) ** 2 * x.size or sxx == 0:
        raise ZeroVariance("first series has zero variance")
    if syy <= (1e-14 * max(np.abs(y).max(), 1e-300)) ** 2 * y.size or syy == 0:
        raise ZeroVariance("second series has zero variance")
    r = (dx @ dy) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def masked_pairwise_pearson(a, b, mask_a=None, mask_b=None, min_overlap: int = 2):
    """Pearson correlation of every row of ``a`` with every row of ``b``.

    Each pair uses only the columns where both rows are flagged active.
    Returns ``(corr, overlap)``; ``corr`` is NaN for pairs with fewer than
    ``min_overlap`` common observations or zero variance on the overlap.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    wa = np.ones(a.shape, bool) if mask_a is None else np.atleast_2d(np.asarray(mask_a, bool))
    wb = np.ones(b.shape, bool) if mask_b is None else np.atleast_2d(np.asarray(mask_b, bool))
    if a.shape[1] != b.shape[1]:
        raise LengthMismatch("row series must have equal length")
    # centre/scale each row over its own active days so the power sums stay well-conditioned
    a = _row_standardize(a, wa)
    b = _row_standardize(b, wb)
    wa_f, wb_f = wa.astype(float), wb.astype(float)
    n = wa_f @ wb_f.T
    sa = a @ wb_f.T
    sb = wa_f @ b.T
    saa = (a * a) @ wb_f.T
    sbb = wa_f @ (b * b).T
    sab = a @ b.T
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = n * sab - sa * sb
        va = n * saa - sa * sa
        vb = n * sbb - sb * sb
        corr = cov / np.sqrt(va * vb)
    tiny = 1e-12 * n * n
    bad = (n < min_overlap) | (va <= tiny) | (vb <= tiny)
    corr = np.where(bad, np.nan, np.clip(corr, -1.0, 1.0))
    return corr, n.astype(int)


def _row_standardize(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    x = np.where(w, x, 0.0)
    cnt = w.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.where(cnt > 0, x.sum(axis=1, keepdims=True) / np.maximum(cnt, 1), 0.0)
        dev = np.where(w, x - mu, 0.0)
        sd = np.sqrt((dev * dev).sum(axis=1, keepdims=True) / np.maximum(cnt, 1))
    return np.where(sd > 0, dev / np.where(sd > 0, sd, 1.0), 0.0)


@dataclass(frozen=True)
class LeastSquaresFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    r_squared: float
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    n_obs: int
    sigma2: float

    @property
    def adj_r_squared(self) -> float:
        k = self.coefficients.size
        dof = self.n_obs - k
        if dof <= 0:
            return float("nan")
        return 1.0 - (1.0 - self.r_squared) * (self.n_obs - 1) / dof


def normal_two_sided_p(t) -> np.ndarray:
    t = np.abs(np.asarray(t, dtype=float))
    return np.vectorize(lambda v: math.erfc(v / math.sqrt(2.0)), otypes=[float])(t)


def _qr_solve(design: np.ndarray, target: np.ndarray, rank_error=RankDeficient):
    q, r = np.linalg.qr(design, mode="reduced")
    diag = np.abs(np.diag(r))
    scale = max(diag.max(initial=0.0), 1e-300)
    if diag.size == 0 or diag.min() <= 1e-10 * scale * max(design.shape):
        raise rank_error(f"design matrix is rank deficient ({design.shape[1]} columns)")
    return solve_triangular(r, q.T @ target, lower=False), r


def ols(design, target) -> LeastSquaresFit:
    """Least squares via Householder QR. The design must contain its own intercept column."""
    x = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design {x.shape} incompatible with target {y.shape}")
    n, k = x.shape
    if n < k:
        raise DimensionMismatch(f"need rows >= cols, got {n}x{k}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise StatsError("non-finite values in regression inputs")
    coef, r = _qr_solve(x, y)
    resid = y - x @ coef
    ssr = float(resid @ resid)
    dev = y - y.mean()
    sst = float(dev @ dev)
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    r2 = min(1.0, max(0.0, r2))
    dof = n - k
    sigma2 = ssr / dof if dof > 0 else float("nan")
    rinv = solve_triangular(r, np.eye(k), lower=False)
    se = np.sqrt(sigma2 * np.sum(rinv * rinv, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.sign(coef) * np.inf)
    p = normal_two_sided_p(t)
    return LeastSquaresFit(coef, resid, r2, se, t, p, n, sigma2)


def partial_correlation(x, y, controls=()) -> float:
    """Correlation of x and y after regressing both on the controls (plus intercept)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"series shapes differ: {x.shape} vs {y.shape}")
    controls = [np.asarray(z, dtype=float) for z in controls]
    if not controls:
        return pearson(x, y)
    if any(z.shape != x.shape for z in controls):
        raise LengthMismatch("controls must match series length")
    design = np.column_stack([np.ones(x.size), *controls])
    if design.shape[0] <= design.shape[1]:
        raise RankDeficientControls("not enough observations for the controls")
    bx, _ = _qr_solve(design, x, RankDeficientControls)
    by, _ = _qr_solve(design, y, RankDeficientControls)
    ex = x - design @ bx
    ey = y - design @ by
    for e, ref, name in ((ex, x, "x"), (ey, y, "y")):
        if np.sqrt(e @ e) <= 1e-10 * max(np.sqrt(ref @ ref), 1e-300):
            raise ZeroVariance(f"residual of {name} on controls vanishes")
    return pearson(ex, ey)


# -- symmetric eigendecomposition ---------------------------------------------

def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint (p, q) pair sets covering every index pair once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            p, q = np.array(pairs).T
            rounds.append((p, q))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def symmetric_eigen(m, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a real symmetric matrix by parallel-ordered cyclic Jacobi.

    Returns eigenvalues sorted descending and eigenvectors as columns. Each
    eigenvector is signed so its largest-magnitude entry is positive.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSquare(f"matrix must be square, got shape {a.shape}")
    n = a.shape[0]
    norm = np.abs(a).max(initial=0.0)
    if not np.isfinite(a).all():
        raise StatsError("matrix has non-finite entries")
    if np.abs(a - a.T).max(initial=0.0) > SYM_TOL * max(norm, 1.0):
        raise NotSymmetric("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n > 1 and norm > 0:
        rounds = _round_robin(n)
        off_mask = ~np.eye(n, dtype=bool)
        target = (np.finfo(float).eps * np.linalg.norm(a)) ** 2
        for _ in range(max_sweeps):
            off = np.sum(a[off_mask] ** 2)
            if off <= target:
                break
            for p, q in rounds:
                apq = a[p, q]
                app = a[p, p]
                aqq = a[q, q]
                active = np.abs(apq) > 1e-300
                safe = np.where(active, apq, 1.0)
                theta = (aqq - app) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(theta == 0, 1.0, t)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c = np.where(active, c, 1.0)
                s = np.where(active, s, 0.0)
                # A <- J^T A J, rows then columns, for all disjoint pairs at once
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c[:, None] * rp - s[:, None] * rq
                a[q, :] = s[:, None] * rp + c[:, None] * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = cp * c - cq * s
                a[:, q] = cp * s + cq * c
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = vp * c - vq * s
                v[:, q] = vp * s + vq * c
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    vals, v = vals[order], v[:, order]
    pivot = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivot, np.arange(n)])
    signs[signs == 0] = 1.0
    return vals, v * signs


def correlation_matrix(x) -> np.ndarray:
    """Correlation matrix of the rows of ``x`` (variables x observations)."""
    x = np.asarray(x, dtype=float)
    dev = x - x.mean(axis=1, keepdims=True)
    sd = np.sqrt((dev * dev).mean(axis=1))
    if (sd <= 0).any():
        raise ZeroVariance(f"rows {np.flatnonzero(sd <= 0).tolist()} have zero variance")
    z = dev / sd[:, None]
    c = z @ z.T / x.shape[1]
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return c


def rowwise_pearson(a, b, mask=None, min_overlap: int = 2) -> np.ndarray:
    """Correlation of ``a[i]`` with ``b[i]`` for each row, over columns where ``mask[i]`` holds.

    Rows with fewer than ``min_overlap`` usable columns or zero variance give NaN.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise LengthMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    w = np.isfinite(a) & np.isfinite(b)
    if mask is not None:
        w &= np.atleast_2d(np.asarray(mask, bool))
    n = w.sum(axis=1)
    a = _row_standardize(np.where(w, a, 0.0), w)
    b = _row_standardize(np.where(w, b, 0.0), w)
    with np.errstate(invalid="ignore", divide="ignore"):
        sab = (a * b).sum(axis=1)
        saa = (a * a).sum(axis=1)
        sbb = (b * b).sum(axis=1)
        r = sab / np.sqrt(saa * sbb)
    bad = (n < min_overlap) | (saa <= 1e-12) | (sbb <= 1e-12)
    return np.where(bad, np.nan, np.clip(r, -1.0, 1.0))
