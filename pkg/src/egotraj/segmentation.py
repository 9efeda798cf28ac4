"""Temporal smoothing of per-frame scores with a Potts MRF.

Frames within ``radius`` of each other are linked; link strength decays
with the distance between their global flow histograms, so label changes
are cheap where the motion changes. The energy is minimised by
alpha-expansion, each move solved exactly as a minimum s-t cut.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .descriptors import flow_maps
from .errors import InputError

BETA_FLOOR = 1e-6
FLOW_EPS = 1e-12


def global_hof(flow, thresh: float = 0.4, nbins: int = 8) -> np.ndarray:
    """Whole-frame HOF (orientation bins plus zero bin), L1-normalised."""
    bins, weights = flow_maps(flow, thresh, nbins)
    h = np.bincount(bins.ravel().astype(np.intp), weights=weights.ravel(), minlength=nbins + 1)
    s = h.sum()
    return h / s if s > 0 else h


@dataclass(frozen=True)
class MrfProblem:
    unary: np.ndarray  # (F, C) costs
    weights: np.ndarray  # (F, radius): weights[i, d-1] links frame i and i+d
    lam: float = 1.0

    def __post_init__(self):
        if self.unary.ndim != 2 or not np.all(np.isfinite(self.unary)):
            raise InputError("unary costs must be a finite (frames, labels) array")
        if len(self.weights) != len(self.unary) or (self.weights < 0).any():
            raise InputError("pairwise weights must be non-negative and aligned with frames")

    @property
    def num_frames(self) -> int:
        return self.unary.shape[0]

    @property
    def num_labels(self) -> int:
        return self.unary.shape[1]

    @property
    def radius(self) -> int:
        return self.weights.shape[1]

    def edges(self):
        """``(i, j, w)`` for every linked pair with ``i < j``."""
        F = self.num_frames
        for d in range(1, self.radius + 1):
            for i in range(F - d):
                yield i, i + d, float(self.weights[i, d - 1])


def build_mrf(scores, hofs, lam: float = 1.0, radius: int = 5) -> MrfProblem:
    """Unary ``max score - score``; Potts weights ``lam * exp(-|h_i - h_j| / beta)``."""
    S = np.asarray(scores, dtype=np.float64)
    H = np.asarray(hofs, dtype=np.float64)
    if S.ndim != 2 or H.ndim != 2 or len(S) != len(H):
        raise InputError(f"scores {S.shape} and histograms {H.shape} are not aligned per frame")
    if lam < 0 or radius < 1:
        raise InputError("lambda must be >= 0 and radius >= 1")
    F = len(S)
    unary = S.max(axis=1, keepdims=True) - S
    dist = np.zeros((F, radius))
    valid = np.zeros((F, radius), dtype=bool)
    for d in range(1, radius + 1):
        if d < F:
            dist[: F - d, d - 1] = np.linalg.norm(H[d:] - H[:-d], axis=1)
            valid[: F - d, d - 1] = True
    beta = max(dist[valid].mean() if valid.any() else 0.0, BETA_FLOOR)
    weights = np.where(valid, lam * np.exp(-dist / beta), 0.0)
    return MrfProblem(unary, weights, lam)


def energy(p: MrfProblem, labels) -> float:
    labels = np.asarray(labels, dtype=np.intp)
    e = p.unary[np.arange(p.num_frames), labels].sum()
    for d in range(1, p.radius + 1):
        if d < p.num_frames:
            e += (p.weights[: -d, d - 1] * (labels[:-d] != labels[d:])).sum()
    return float(e)


# -- max flow -----------------------------------------------------------------

class FlowGraph:
    """Directed capacitated graph with a source and a sink node."""

    def __init__(self, n: int, source: int, sink: int):
        if not (0 <= source < n and 0 <= sink < n) or source == sink:
            raise InputError("source and sink must be distinct nodes of the graph")
        self.n = n
        self.source = source
        self.sink = sink
        self.cap = [dict() for _ in range(n)]

    def add_edge(self, u: int, v: int, c: float) -> None:
        if c < 0:
            raise InputError(f"negative capacity {c} on edge {u}->{v}")
        if u == v or c == 0:
            return
        self.cap[u][v] = self.cap[u].get(v, 0.0) + c
        self.cap[v].setdefault(u, 0.0)


def _bfs(residual, start, forward=True):
    n = len(residual)
    seen = [False] * n
    seen[start] = True
    q = deque([start])
    while q:
        u = q.popleft()
        if forward:
            for v, c in residual[u].items():
                if c > FLOW_EPS and not seen[v]:
                    seen[v] = True
                    q.append(v)
        else:
            for v in residual[u]:
                if residual[v].get(u, 0.0) > FLOW_EPS and not seen[v]:
                    seen[v] = True
                    q.append(v)
    return np.array(seen)


def _max_flow(g: FlowGraph):
    res = [dict(d) for d in g.cap]
    s, t = g.source, g.sink
    total = 0.0
    while True:
        parent = [-1] * g.n
        parent[s] = s
        q = deque([s])
        while q and parent[t] < 0:
            u = q.popleft()
            for v, c in res[u].items():
                if c > FLOW_EPS and parent[v] < 0:
                    parent[v] = u
                    q.append(v)
        if parent[t] < 0:
            break
        bottleneck = np.inf
        v = t
        while v != s:
            u = parent[v]
            bottleneck = min(bottleneck, res[u][v])
            v = u
        v = t
        while v != s:
            u = parent[v]
            res[u][v] -= bottleneck
            res[v][u] += bottleneck
            v = u
        total += bottleneck
    return total, res


def max_flow(g: FlowGraph):
    """Shortest-augmenting-path max flow.

    Returns ``(value, source_side)`` where ``source_side[i]`` is True for
    nodes reachable from the source in the final residual graph.
    """
    total, res = _max_flow(g)
    return total, _bfs(res, g.source)


def _sink_side(g: FlowGraph):
    """Min cut with the smallest sink side (nodes that can still reach the sink)."""
    total, res = _max_flow(g)
    return total, _bfs(res, g.sink, forward=False)


# -- alpha-expansion ----------------------------------------------------------

def _binary_cut(e0, e1, pairs):
    """Minimise ``sum_i E_i(x_i) + sum E_ij(x_i, x_j)`` over binary ``x``.

    ``pairs`` holds ``(i, j, A, B, C, D)`` with ``E_ij(0,0)=A``, ``(0,1)=B``,
    ``(1,0)=C``, ``(1,1)=D``; every term must be submodular. Ties keep ``x=0``.
    """
    n = len(e0)
    s, t = n, n + 1
    g = FlowGraph(n + 2, s, t)
    lin = np.asarray(e1, dtype=np.float64) - np.asarray(e0, dtype=np.float64)
    lin = lin.copy()
    edges = []
    for i, j, A, B, C, D in pairs:
        lin[i] += C - A
        lin[j] += D - C
        edges.append((i, j, B + C - A - D))
    for i in range(n):
        # x_i = 1 puts i on the sink side and cuts s->i
        if lin[i] > 0:
            g.add_edge(s, i, lin[i])
        elif lin[i] < 0:
            g.add_edge(i, t, -lin[i])
    for i, j, w in edges:
        if w < -1e-12:
            raise InputError("pairwise term is not submodular")
        if w > 0:
            g.add_edge(i, j, w)
    _, sink = _sink_side(g)
    return sink[:n]


def _expansion(p: MrfProblem, labels, alpha):
    F = p.num_frames
    idx = np.arange(F)
    e0 = p.unary[idx, labels]
    e1 = np.where(labels == alpha, e0, p.unary[:, alpha])
    pairs = []
    for i, j, w in p.edges():
        if w == 0.0:
            continue
        li, lj = labels[i], labels[j]
        pairs.append((i, j, w * (li != lj), w * (li != alpha), w * (alpha != lj), 0.0))
    x = _binary_cut(e0, e1, pairs)
    out = labels.copy()
    out[x] = alpha
    return out


def _solve_binary(p: MrfProblem):
    pairs = [(i, j, 0.0, w, w, 0.0) for i, j, w in p.edges() if w > 0]
    return _binary_cut(p.unary[:, 0], p.unary[:, 1], pairs).astype(np.intp)


def alpha_expansion(p: MrfProblem, init=None, max_sweeps: int = 100):
    """Returns ``(labels, energies)`` with the energy after init and after each sweep."""
    labels = np.argmin(p.unary, axis=1) if init is None else np.array(init, dtype=np.intp)
    if labels.shape != (p.num_frames,) or (labels < 0).any() or (labels >= p.num_labels).any():
        raise InputError("initial labeling does not match the problem")
    cur = energy(p, labels)
    energies = [cur]
    if p.num_labels == 2 and p.num_frames:
        exact = _solve_binary(p)
        e = energy(p, exact)
        if e < cur:
            labels, cur = exact, e
        energies.append(cur)
        return labels, energies
    for _ in range(max_sweeps):
        improved = False
        for alpha in range(p.num_labels):
            cand = _expansion(p, labels, alpha)
            e = energy(p, cand)
            if e < cur - 1e-12:
                labels, cur, improved = cand, e, True
        energies.append(cur)
        if not improved:
            break
    return labels, energies


def minimize_labeling(p: MrfProblem, init=None) -> np.ndarray:
    """Alpha-expansion from ``init`` (default: per-frame best label)."""
    return alpha_expansion(p, init)[0]


def smooth_scores(scores, hofs, lam: float = 1.0, radius: int = 5):
    """Per-frame argmax and MRF-smoothed labels plus energies before and after."""
    p = build_mrf(scores, hofs, lam, radius)
    init = np.argmax(np.asarray(scores), axis=1)
    labels, energies = alpha_expansion(p, init)
    return init, labels, energies[0], energies[-1]
