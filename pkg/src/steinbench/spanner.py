"""Geometric t-spanners over a point set in the l1 metric."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numba as nb
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .core import ConfigError, IngestionError, WeightedSample, format_float

VERIFY_SLACK = 1e-9
WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpannerGraph:
    """Undirected weighted graph on sample indices.

    Edges are stored as parallel arrays ``src < dst`` with ``weight`` equal
    to the l1 distance of the endpoints.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    stretch: float = 1.0

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        w = np.asarray(self.weight, dtype=float).reshape(-1)
        if not (src.size == dst.size == w.size):
            raise ValueError("edge arrays differ in length")
        if src.size:
            if np.any(src >= dst):
                raise ValueError("edges must satisfy i < l (no self-loops)")
            if src.min() < 0 or dst.max() >= self.n:
                raise ValueError("edge endpoint out of range")
            key = src * self.n + dst
            if np.unique(key).size != key.size:
                raise ValueError("duplicate edge")
        if self.stretch < 1:
            raise ValueError("stretch must be at least 1")
        for name, arr in (("src", src), ("dst", dst), ("weight", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    @property
    def edges(self):
        return [(int(i), int(l), float(w)) for i, l, w in zip(self.src, self.dst, self.weight)]

    def edge_set(self):
        return {(int(i), int(l)) for i, l in zip(self.src, self.dst)}

    def to_csr(self):
        A = sp.coo_matrix((self.weight, (self.src, self.dst)), shape=(self.n, self.n))
        return (A + A.T).tocsr()

    def check_weights(self, sample: WeightedSample) -> None:
        """Raise unless every weight equals the l1 distance of its endpoints."""
        if sample.n != self.n:
            raise IngestionError(f"graph has {self.n} vertices, sample has {sample.n} points")
        if self.n_edges == 0:
            return
        X = sample.points
        true_w = np.abs(X[self.src] - X[self.dst]).sum(axis=1)
        bad = np.abs(true_w - self.weight) > WEIGHT_TOL * np.maximum(1.0, true_w)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise IngestionError(
                f"edge ({self.src[k]},{self.dst[k]}) has weight {self.weight[k]!r}, "
                f"l1 distance is {true_w[k]!r}"
            )


def l1_distance(a, b) -> float:
    return float(np.abs(np.asarray(a, float) - np.asarray(b, float)).sum())


# ---------------------------------------------------------------------------
# greedy construction
# ---------------------------------------------------------------------------
@nb.njit(cache=True, nogil=True)
def _dijkstra_row(src, n, deg, nbr, nw, out, heap_v, heap_d, pos):
    # binary heap with decrease-key; out receives all distances from src
    for v in range(n):
        out[v] = np.inf
        pos[v] = -1
    size = 0
    out[src] = 0.0
    heap_v[0] = src
    heap_d[0] = 0.0
    pos[src] = 0
    size = 1
    while size > 0:
        u = heap_v[0]
        du = heap_d[0]
        pos[u] = -2
        size -= 1
        if size > 0:
            v = heap_v[size]
            dv = heap_d[size]
            k = 0
            while True:
                ch = 2 * k + 1
                if ch >= size:
                    break
                if ch + 1 < size and heap_d[ch + 1] < heap_d[ch]:
                    ch += 1
                if heap_d[ch] >= dv:
                    break
                heap_v[k] = heap_v[ch]
                heap_d[k] = heap_d[ch]
                pos[heap_v[k]] = k
                k = ch
            heap_v[k] = v
            heap_d[k] = dv
            pos[v] = k
        for e in range(deg[u]):
            v = nbr[u, e]
            if pos[v] == -2:
                continue
            alt = du + nw[u, e]
            if alt < out[v]:
                out[v] = alt
                k = pos[v]
                if k == -1:
                    k = size
                    size += 1
                while k > 0:
                    par = (k - 1) // 2
                    if heap_d[par] <= alt:
                        break
                    heap_v[k] = heap_v[par]
                    heap_d[k] = heap_d[par]
                    pos[heap_v[k]] = k
                    k = par
                heap_v[k] = v
                heap_d[k] = alt
                pos[v] = k


@nb.njit(cache=True, nogil=True)
def _greedy(n, pi, pl, pw, t):
    # Plain greedy spanner with a cache of stale (upper bound) distances:
    # a cached distance within t*w proves the pair is already spanned, so
    # Dijkstra only reruns when the cache cannot decide.
    cap = 8
    deg = np.zeros(n, dtype=np.int64)
    nbr = np.zeros((n, cap), dtype=np.int64)
    nw = np.zeros((n, cap))
    cache = np.full((n, n), np.inf)
    for v in range(n):
        cache[v, v] = 0.0
    row = np.empty(n)
    heap_v = np.empty(n, dtype=np.int64)
    heap_d = np.empty(n)
    pos = np.empty(n, dtype=np.int64)
    keep = np.zeros(pi.size, dtype=np.bool_)
    for p in range(pi.size):
        i = pi[p]
        l = pl[p]
        bound = t * pw[p]
        if cache[i, l] <= bound:
            continue
        _dijkstra_row(i, n, deg, nbr, nw, row, heap_v, heap_d, pos)
        for v in range(n):
            cache[i, v] = row[v]
            cache[v, i] = row[v]
        if row[l] <= bound:
            continue
        keep[p] = True
        cache[i, l] = pw[p]
        cache[l, i] = pw[p]
        if deg[i] == cap or deg[l] == cap:
            cap *= 2
            nbr2 = np.zeros((n, cap), dtype=np.int64)
            nw2 = np.zeros((n, cap))
            nbr2[:, : cap // 2] = nbr
            nw2[:, : cap // 2] = nw
            nbr = nbr2
            nw = nw2
        nbr[i, deg[i]] = l
        nw[i, deg[i]] = pw[p]
        deg[i] += 1
        nbr[l, deg[l]] = i
        nw[l, deg[l]] = pw[p]
        deg[l] += 1
    return keep


def _all_pairs(X):
    n = X.shape[0]
    I, L = np.triu_indices(n, k=1)
    W = np.zeros(I.size)
    for k in range(X.shape[1]):
        W += np.abs(X[I, k] - X[L, k])
    return I.astype(np.int64), L.astype(np.int64), W


def build_greedy_spanner(sample: WeightedSample, t: float = 2.0) -> SpannerGraph:
    """Greedy t-spanner: scan pairs by increasing l1 distance and add an
    edge whenever the current graph distance exceeds ``t`` times it.

    Ties are broken by the index pair ``(i, l)``.
    """
    if not t >= 1:
        raise ConfigError(f"stretch must be >= 1, got {t}")
    X = np.asarray(sample.points, dtype=float)
    n = X.shape[0]
    if n < 2:
        return SpannerGraph(n, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), float(t))
    I, L, W = _all_pairs(X)
    order = np.lexsort((L, I, W))
    I, L, W = I[order], L[order], W[order]
    keep = _greedy(n, I, L, W, float(t))
    return SpannerGraph(n, I[keep], L[keep], W[keep], float(t))


def build_sorted_1d_spanner(sample: WeightedSample) -> SpannerGraph:
    """Chain of sort-adjacent points; exact (stretch 1) in one dimension."""
    if sample.d != 1:
        raise ConfigError(f"sorted spanner needs d = 1, sample has d = {sample.d}")
    x = sample.points[:, 0]
    order = np.argsort(x, kind="stable")
    a, b = order[:-1], order[1:]
    src, dst = np.minimum(a, b), np.maximum(a, b)
    w = np.abs(x[src] - x[dst])
    srt = np.lexsort((dst, src))
    return SpannerGraph(sample.n, src[srt], dst[srt], w[srt], 1.0)


def complete_graph(sample: WeightedSample) -> SpannerGraph:
    I, L, W = _all_pairs(np.asarray(sample.points, dtype=float))
    return SpannerGraph(sample.n, I, L, W, 1.0)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SpannerCheck:
    ok: bool
    pair: Optional[tuple] = None
    path_length: float = 0.0
    distance: float = 0.0


def _first_violation(D, sources, X, t):
    for row, i in enumerate(sources):
        dist = np.abs(X - X[i]).sum(axis=1)
        bad = D[row] > t * dist + VERIFY_SLACK
        bad[: i + 1] = False
        hit = np.flatnonzero(bad)
        if hit.size:
            l = int(hit[0])
            return SpannerCheck(False, (int(i), l), float(D[row, l]), float(dist[l]))
    return None


def verify_spanner(graph: SpannerGraph, sample: WeightedSample, t: float, threads: int = 1) -> SpannerCheck:
    """All-pairs shortest paths check of the t-spanner property.

    Returns the lexicographically first pair ``(i, l)`` whose graph distance
    exceeds ``t`` times its l1 distance (plus 1e-9), or ``ok``.
    """
    if graph.n != sample.n:
        raise ValueError(f"graph has {graph.n} vertices, sample has {sample.n} points")
    n = graph.n
    if n < 2:
        return SpannerCheck(True)
    X = np.asarray(sample.points, dtype=float)
    A = graph.to_csr()
    blocks = np.array_split(np.arange(n), max(1, min(int(threads), n)))

    def run(block):
        if block.size == 0:
            return None
        D = dijkstra(A, directed=False, indices=block)
        return _first_violation(D, block, X, t)

    if len(blocks) == 1:
        found = [run(blocks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            found = list(pool.map(run, blocks))
    for f in found:
        if f is not None:
            return f
    return SpannerCheck(True)


# ---------------------------------------------------------------------------
# edge list files
# ---------------------------------------------------------------------------
def save_edges(graph: SpannerGraph, path) -> None:
    """Write one ``i,l,w`` row per edge."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# i,l,w\n")
        for i, l, w in zip(graph.src, graph.dst, graph.weight):
            fh.write(f"{int(i)},{int(l)},{format_float(w)}\n")


def load_edges(path, sample: WeightedSample, stretch: float = 1.0) -> SpannerGraph:
    """Read an ``i,l,w`` edge list and check it against ``sample``.

    Endpoints may appear in either order; weights must equal the l1
    distances of the endpoints.
    """
    src, dst, w = [], [], []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                s = line.strip()
                if not s or s.startswith("#"):
                    continue
                parts = s.split(",")
                if len(parts) != 3:
                    raise IngestionError(f"{path}:{lineno}: expected i,l,w")
                try:
                    i, l, wt = int(parts[0]), int(parts[1]), float(parts[2])
                except ValueError as exc:
                    raise IngestionError(f"{path}:{lineno}: {exc}") from None
                src.append(min(i, l))
                dst.append(max(i, l))
                w.append(wt)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from None
    try:
        graph = SpannerGraph(sample.n, np.array(src, np.int64), np.array(dst, np.int64), np.array(w), stretch)
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from None
    graph.check_weights(sample)
    return graph
