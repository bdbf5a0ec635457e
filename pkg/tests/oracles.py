"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the package under test.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction


def pearson_loop(x, y) -> float:
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def partial_single_control(x, y, z) -> float:
    rxy, rxz, ryz = pearson_loop(x, y), pearson_loop(x, z), pearson_loop(y, z)
    return (rxy - rxz * ryz) / math.sqrt((1 - rxz ** 2) * (1 - ryz ** 2))


def binom_pmf_exact(k: int, n: int, p) -> float:
    p = Fraction(p)
    return float(math.comb(n, k) * p ** k * (1 - p) ** (n - k))


def herding_rule(k: int, n: int, alpha: float = 0.05) -> tuple[int, int]:
    """(h, H) for k buyers out of n under the literal pmf threshold."""
    h = 1 if binom_pmf_exact(k, n, Fraction(1, 2)) <= alpha else 0
    sign = (k > n - k) - (k < n - k)
    return h, h * sign


def null_herding_rate_enumerated(n: int, alpha: float = 0.05) -> float:
    """Probability that n fair coins produce h = 1."""
    total = Fraction(0)
    for k in range(n + 1):
        pmf = Fraction(math.comb(n, k), 2 ** n)
        if pmf <= Fraction(alpha).limit_denominator(10 ** 12):
            total += pmf
    return float(total)


def mp_edges(q: float, sigma2: float = 1.0) -> tuple[float, float]:
    s = math.sqrt(1.0 / q)
    return sigma2 * (1 - s) ** 2, sigma2 * (1 + s) ** 2


def modularity_loop(w, labels) -> float:
    """Newman modularity of an undirected weighted graph, as a double sum over node pairs."""
    n = len(w)
    k = [math.fsum(w[i]) for i in range(n)]
    two_m = math.fsum(k)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if labels[i] == labels[j]:
                total += w[i][j] - k[i] * k[j] / two_m
    return total / two_m


def set_partitions(n: int):
    """All set partitions of range(n) as restricted-growth label tuples."""
    def grow(prefix, top):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for c in range(top + 2):
            yield from grow(prefix + [c], max(top, c))
    if n == 0:
        yield ()
        return
    yield from grow([0], 0)


def best_modularity(w) -> float:
    return max(modularity_loop(w, p) for p in set_partitions(len(w)))


def map_codelength_loop(w, labels) -> float:
    """Two-level map equation for an undirected weighted graph (bits)."""
    n = len(w)
    two_w = math.fsum(math.fsum(row) for row in w)
    p = [math.fsum(w[i]) / two_w for i in range(n)]
    mods = sorted(set(labels))
    q = {}
    for m in mods:
        q[m] = math.fsum(w[i][j] for i in range(n) for j in range(n)
                         if labels[i] == m and labels[j] != m) / two_w

    def plogp(v):
        return v * math.log2(v) if v > 0 else 0.0

    q_total = math.fsum(q.values())
    out = plogp(q_total) - 2 * math.fsum(plogp(v) for v in q.values())
    out -= math.fsum(plogp(v) for v in p)
    for m in mods:
        out += plogp(q[m] + math.fsum(p[i] for i in range(n) if labels[i] == m))
    return out


def directionality_loop(buy, sell, active, theta: float) -> float:
    """Fraction of active days with |B-S|/(B+S) >= theta, pooled per stock then averaged."""
    per_stock = []
    for b_row, s_row, a_row in zip(buy, sell, active):
        hits = days = 0
        for b, s, a in zip(b_row, s_row, a_row):
            if not a or b + s <= 0:
                continue
            days += 1
            hits += abs(b - s) / (b + s) >= theta
        if days:
            per_stock.append(hits / days)
    return sum(per_stock) / len(per_stock)


def ols_normal_equations(x, y):
    """Coefficients from (X'X) b = X'y solved by Gauss-Jordan elimination in Fractions-free floats."""
    k = len(x[0])
    a = [[math.fsum(row[i] * row[j] for row in x) for j in range(k)] for i in range(k)]
    b = [math.fsum(row[i] * t for row, t in zip(x, y)) for i in range(k)]
    m = [a[i] + [b[i]] for i in range(k)]
    for c in range(k):
        piv = max(range(c, k), key=lambda r: abs(m[r][c]))
        m[c], m[piv] = m[piv], m[c]
        for r in range(k):
            if r != c:
                f = m[r][c] / m[c][c]
                m[r] = [u - f * v for u, v in zip(m[r], m[c])]
    return [m[i][k] / m[i][i] for i in range(k)]


def nmi_loop(a, b) -> float:
    n = len(a)
    ca, cb = {}, {}
    joint = {}
    for u, v in zip(a, b):
        ca[u] = ca.get(u, 0) + 1
        cb[v] = cb.get(v, 0) + 1
        joint[(u, v)] = joint.get((u, v), 0) + 1
    ha = -sum(c / n * math.log(c / n) for c in ca.values())
    hb = -sum(c / n * math.log(c / n) for c in cb.values())
    if ha == 0 and hb == 0:
        return 1.0
    mi = sum(c / n * math.log((c / n) / (ca[u] / n * cb[v] / n)) for (u, v), c in joint.items())
    return mi / (0.5 * (ha + hb))


def all_pairs(n: int):
    return itertools.combinations(range(n), 2)
