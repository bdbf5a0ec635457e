"""Member correlation network, modularity and two-level map-equation community detection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from memberflow.errors import MemberFlowError
from memberflow.panel import TradePanel
from memberflow.stats import masked_pairwise_pearson

DEFAULT_THRESHOLD = 0.015
DEFAULT_RESTARTS = 10
MIN_OVERLAP = 30
_IMPROVE_EPS = 1e-10


class NetworkError(MemberFlowError, ValueError):
    module = "network"


class TooFewMembers(NetworkError):
    pass


class EmptyNetwork(NetworkError):
    pass


@dataclass(frozen=True, eq=False)
class MemberNetwork:
    """Undirected weighted graph; ``weights[i, j] > 0`` marks an edge, diagonal is zero."""

    nodes: tuple[str, ...]
    weights: np.ndarray
    threshold: float
    node_info: Mapping[str, Mapping] = field(default_factory=dict)
    raw_weights: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.nodes), len(self.nodes)):
            raise NetworkError(f"weight matrix shape {w.shape} does not match {len(self.nodes)} nodes")
        if not np.allclose(w, w.T, rtol=0, atol=1e-12):
            raise NetworkError("weights must be symmetric")
        if np.any(np.diag(w) != 0):
            raise NetworkError("self-loops are not allowed")
        object.__setattr__(self, "weights", w)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def edges(self) -> list[tuple[str, str, float]]:
        i, j = np.nonzero(np.triu(self.weights, k=1))
        return [(self.nodes[a], self.nodes[b], float(self.weights[a, b])) for a, b in zip(i, j)]


@dataclass(frozen=True)
class Partition:
    labels: tuple[int, ...]
    n_communities: int
    modularity: float
    codelength: float
    codelength_trace: tuple[float, ...] = ()

    def as_dict(self, nodes: Sequence[str]) -> dict[str, int]:
        return dict(zip(nodes, self.labels))


def network_from_weights(nodes: Sequence[str], weights, threshold: float = DEFAULT_THRESHOLD,
                         node_info: Mapping[str, Mapping] | None = None) -> MemberNetwork:
    """Keep entries strictly above ``threshold``; NaN (no overlap) means no edge."""
    raw = np.array(weights, dtype=float)
    np.fill_diagonal(raw, np.nan)
    kept = np.where(np.nan_to_num(raw, nan=-np.inf) > threshold, raw, 0.0)
    kept = np.nan_to_num(kept)
    np.fill_diagonal(kept, 0.0)
    return MemberNetwork(tuple(nodes), kept, threshold, dict(node_info or {}), raw)


def mean_pair_correlations(panel: TradePanel, members: np.ndarray, decile: int = 1,
                           min_overlap: int = MIN_OVERLAP) -> np.ndarray:
    """Mean over decile stocks and years of member-pair flow correlations on common active days."""
    stocks = panel.decile_stocks(decile)
    k = members.size
    total = np.zeros((k, k))
    count = np.zeros((k, k))
    net = panel.member_buy - panel.member_sell
    for year in panel.year_list:
        cols = np.flatnonzero(panel.year_mask(year))
        for s in stocks:
            x = net[np.ix_(members, [s], cols)][:, 0, :]
            w = panel.member_present[np.ix_(members, [s], cols)][:, 0, :]
            corr, _ = masked_pairwise_pearson(x, x, w, w, min_overlap=min_overlap)
            ok = ~np.isnan(corr)
            total[ok] += corr[ok]
            count[ok] += 1
    with np.errstate(invalid="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return 0.5 * (mean + mean.T)


def build_network(panel: TradePanel, decile: int = 1, threshold: float = DEFAULT_THRESHOLD,
                  min_volume_ratio: float = 0.1, min_overlap: int = MIN_OVERLAP,
                  classes: Mapping | None = None) -> MemberNetwork:
    stocks = panel.decile_stocks(decile)
    volume = panel.member_volume(stocks)
    mean_volume = volume.mean() if volume.size else 0.0
    active_days = panel.member_present[:, stocks].sum(axis=2).max(axis=1, initial=0)
    eligible = np.flatnonzero((volume >= min_volume_ratio * mean_volume) & (volume > 0)
                              & (active_days >= min_overlap))
    if eligible.size < 2:
        raise TooFewMembers(f"only {eligible.size} eligible members in decile {decile}")
    weights = mean_pair_correlations(panel, eligible, decile, min_overlap)
    nodes = tuple(panel.member_ids[j] for j in eligible)
    info = {}
    for j, mid in zip(eligible, nodes):
        meta = panel.members[j]
        entry = {"domicile": meta.domicile.value, "volume": float(volume[j])}
        if classes is not None and mid in classes:
            cls = classes[mid]
            entry["class"] = getattr(cls, "value", cls)
        info[mid] = entry
    return network_from_weights(nodes, weights, threshold, info)


def modularity(network: MemberNetwork, labels) -> float:
    """Weighted Newman modularity of a node labelling."""
    w = network.weights
    if network.n_nodes == 0 or w.sum() <= 0:
        raise EmptyNetwork("network has no edges")
    labels = np.asarray(labels)
    if labels.shape != (network.n_nodes,):
        raise NetworkError("partition must label every node")
    two_w = w.sum()
    q = 0.0
    strength = w.sum(axis=1)
    for c in np.unique(labels):
        members = labels == c
        w_in = w[np.ix_(members, members)].sum() / 2.0
        q += w_in / (two_w / 2.0) - (strength[members].sum() / two_w) ** 2
    return float(q)


def _plogp(p: float) -> float:
    return p * math.log2(p) if p > 0 else 0.0


def map_codelength(weights, labels) -> float:
    """Two-level map-equation codelength (bits) of an undirected weighted graph."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        return 0.0
    labels = np.asarray(labels)
    flow = w.sum(axis=1) / total
    exit_sum = 0.0
    module_terms = 0.0
    for c in np.unique(labels):
        m = labels == c
        q = w[np.ix_(m, ~m)].sum() / total
        exit_sum += q
        module_terms += -2.0 * _plogp(q) + _plogp(q + flow[m].sum())
    return _plogp(exit_sum) + module_terms - sum(_plogp(p) for p in flow)


class _MapState:
    """Incremental codelength bookkeeping for greedy moves on one aggregation level."""

    def __init__(self, a: np.ndarray, total: float, labels: np.ndarray):
        self.a = a
        self.total = total
        self.labels = labels.copy()
        self.node_flow = a.sum(axis=1) / total
        self.node_out = (a.sum(axis=1) - np.diag(a)) / total
        k = labels.max() + 1
        self.mod_flow = np.bincount(labels, weights=self.node_flow, minlength=k)
        self.mod_exit = np.zeros(k)
        for c in range(k):
            m = labels == c
            self.mod_exit[c] = a[np.ix_(m, ~m)].sum() / total
        self.exit_total = self.mod_exit.sum()

    def _module_term(self, q: float, p: float) -> float:
        return -2.0 * _plogp(q) + _plogp(q + p)

    def move_delta(self, i: int, old: int, new: int, w_old: float, w_new: float):
        p = self.node_flow[i]
        o = self.node_out[i]
        q_old = self.mod_exit[old] - o + 2.0 * w_old
        q_new = self.mod_exit[new] + o - 2.0 * w_new
        exit_total = self.exit_total - self.mod_exit[old] - self.mod_exit[new] + q_old + q_new
        delta = (_plogp(exit_total) - _plogp(self.exit_total)
                 + self._module_term(q_old, self.mod_flow[old] - p)
                 + self._module_term(q_new, self.mod_flow[new] + p)
                 - self._module_term(self.mod_exit[old], self.mod_flow[old])
                 - self._module_term(self.mod_exit[new], self.mod_flow[new]))
        return delta, q_old, q_new, exit_total

    def apply(self, i: int, old: int, new: int, q_old: float, q_new: float, exit_total: float):
        p = self.node_flow[i]
        self.mod_exit[old], self.mod_exit[new] = max(q_old, 0.0), max(q_new, 0.0)
        self.mod_flow[old] -= p
        self.mod_flow[new] += p
        self.exit_total = exit_total
        self.labels[i] = new


def _local_moves(a: np.ndarray, total: float, rng: np.random.Generator, level_l: float,
                 trace: list[float]) -> np.ndarray:
    n = a.shape[0]
    state = _MapState(a, total, np.arange(n))
    current = level_l
    improved = True
    while improved:
        improved = False
        for i in rng.permutation(n):
            old = state.labels[i]
            links = np.bincount(state.labels, weights=a[i], minlength=state.mod_exit.size)
            links[old] -= a[i, i]
            links /= total
            w_old = links[old]
            best = (0.0, None)
            for new in np.flatnonzero(links > 0):
                if new == old:
                    continue
                delta, q_old, q_new, exit_total = state.move_delta(i, old, new, w_old, links[new])
                if delta < best[0] - _IMPROVE_EPS:
                    best = (delta, (new, q_old, q_new, exit_total))
            if best[1] is not None:
                new, q_old, q_new, exit_total = best[1]
                state.apply(i, old, new, q_old, q_new, exit_total)
                current += best[0]
                trace.append(current)
                improved = True
    _, relabelled = np.unique(state.labels, return_inverse=True)
    return relabelled


def _optimize(w: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, list[float]]:
    n = w.shape[0]
    total = w.sum()
    node_labels = np.arange(n)
    trace = [map_codelength(w, node_labels)]
    a = w.copy()
    while True:
        level = _local_moves(a, total, rng, trace[-1], trace)
        k = level.max() + 1
        node_labels = level[node_labels]
        if k == a.shape[0]:
            break
        agg = np.zeros((k, a.shape[0]))
        agg[level, np.arange(a.shape[0])] = 1.0
        a = agg @ a @ agg.T
        if k == 1:
            break
    return node_labels, trace


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel communities 0, 1, ... in order of first appearance."""
    mapping = {}
    out = np.empty_like(labels)
    for i, c in enumerate(labels):
        out[i] = mapping.setdefault(int(c), len(mapping))
    return out


def detect_communities(network: MemberNetwork, seed: int = 0,
                       restarts: int = DEFAULT_RESTARTS) -> Partition:
    """Minimise the two-level map equation by greedy moves with aggregation.

    The best of ``restarts`` randomised runs is returned; the one-module
    solution is kept when no split shortens the description.
    """
    n = network.n_nodes
    if n == 0:
        raise EmptyNetwork("network has no nodes")
    w = network.weights
    if w.sum() <= 0:
        labels = np.arange(n)
        return Partition(tuple(labels.tolist()), n, float("nan"), 0.0, (0.0,))
    best_labels = np.zeros(n, dtype=int)
    best_l = map_codelength(w, best_labels)
    best_trace = (best_l,)
    for rng in (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(restarts)):
        labels, trace = _optimize(w, rng)
        length = map_codelength(w, labels)
        if length < best_l - _IMPROVE_EPS:
            best_l, best_labels, best_trace = length, labels, tuple(trace)
    labels = _canonical(best_labels)
    return Partition(tuple(int(c) for c in labels), int(labels.max()) + 1,
                     modularity(network, labels), float(best_l), best_trace)


def nmi(a, b) -> float:
    """Normalized mutual information with arithmetic-mean normalisation."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise NetworkError("labelings differ in length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    n = a.size
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    pj = joint / n
    pa = pj.sum(axis=1)
    pb = pj.sum(axis=0)
    ha = -sum(p * math.log(p) for p in pa if p > 0)
    hb = -sum(p * math.log(p) for p in pb if p > 0)
    if ha == 0 and hb == 0:
        return 1.0
    nz = pj > 0
    mi = float((pj[nz] * np.log(pj[nz] / np.outer(pa, pb)[nz])).sum())
    denom = 0.5 * (ha + hb)
    return max(0.0, min(1.0, mi / denom)) if denom > 0 else 0.0
