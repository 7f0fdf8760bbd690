"""Minimum spanning tree similarity graphs.

Observations become nodes of a complete Euclidean graph. The minimum
spanning tree (MST) of that graph gives a sparse distance matrix ``M``,
which is turned into a similarity matrix ``S`` by inverting the positive
entries.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass
from os import PathLike

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

#: Tree edges shorter than this count as zero-length (duplicate observations).
DUPLICATE_EPS = 1e-12


@dataclass(frozen=True)
class EdgeList:
    """Weighted undirected edges stored as parallel arrays with ``i < j``."""

    i: np.ndarray
    j: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64)
        j = np.asarray(self.j, dtype=np.int64)
        w = np.asarray(self.weight, dtype=np.float64)
        if not (i.shape == j.shape == w.shape and i.ndim == 1):
            raise ValueError("edge arrays must be 1-D and of equal length")
        if np.any(i == j):
            raise ValueError("self loops are not allowed")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("edge weights must be finite and non-negative")
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        if len(lo) and len(np.unique(lo * (hi.max() + 1) + hi)) != len(lo):
            raise ValueError("duplicate edges")
        object.__setattr__(self, "i", lo)
        object.__setattr__(self, "j", hi)
        object.__setattr__(self, "weight", w)

    def __len__(self):
        return len(self.weight)

    @classmethod
    def from_triples(cls, triples) -> EdgeList:
        triples = list(triples)
        if not triples:
            return cls(np.empty(0, int), np.empty(0, int), np.empty(0))
        i, j, w = zip(*triples)
        return cls(np.array(i), np.array(j), np.array(w, dtype=float))

    def triples(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.i, self.j, self.weight)]


@dataclass(frozen=True)
class MstDistance:
    """Edges of a spanning tree over ``n`` nodes.

    The edges are kept explicitly because a zero-length edge (two identical
    observations) would vanish from a sparse matrix.
    """

    n: int
    edges: EdgeList

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.edges.weight))

    @property
    def matrix(self) -> sp.csr_matrix:
        """Symmetric ``n x n`` matrix ``M`` of tree edge lengths."""
        e = self.edges
        rows = np.concatenate([e.i, e.j])
        cols = np.concatenate([e.j, e.i])
        vals = np.concatenate([e.weight, e.weight])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def neighbors(self, node: int) -> np.ndarray:
        e = self.edges
        return np.sort(np.concatenate([e.j[e.i == node], e.i[e.j == node]]))


@dataclass(frozen=True)
class SparseSimilarity:
    """MST similarity matrix ``S`` with its degree vector ``D_ii = sum_j S_ij``."""

    S: sp.csr_matrix
    degree: np.ndarray

    @property
    def n(self) -> int:
        return self.S.shape[0]


def _as_points(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D data matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("data matrix contains non-finite entries")
    return A


def _distances_from(A: np.ndarray, r: int) -> np.ndarray:
    diff = A - A[r]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def build_complete_graph(A) -> EdgeList:
    """All ``n(n-1)/2`` Euclidean edges between the rows of ``A``."""
    A = _as_points(A)
    n = A.shape[0]
    if n < 2:
        raise ValueError("need at least 2 observations to build a graph")
    i, j, w = [], [], []
    for r in range(n - 1):
        i.append(np.full(n - r - 1, r))
        j.append(np.arange(r + 1, n))
        w.append(_distances_from(A, r)[r + 1:])
    return EdgeList(np.concatenate(i), np.concatenate(j), np.concatenate(w))


def minimum_spanning_tree(g: EdgeList, n: int) -> MstDistance:
    """Prim's algorithm with a binary heap over an explicit edge list.

    Equal weights are resolved by the lexicographically smallest ``(i, j)``
    pair, so the tree is deterministic.

    Raises
    ------
    ValueError
        If some node cannot be reached from node 0.
    """
    if n < 1:
        raise ValueError("graph must have at least one node")
    if len(g) and (g.j.max() >= n or g.i.min() < 0):
        raise ValueError(f"edge references a node outside 0..{n - 1}")
    adjacency: list[list[tuple[float, int, int, int]]] = [[] for _ in range(n)]
    for a, b, w in zip(g.i.tolist(), g.j.tolist(), g.weight.tolist()):
        adjacency[a].append((w, a, b, b))
        adjacency[b].append((w, a, b, a))

    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    heap = list(adjacency[0])
    heapq.heapify(heap)
    ti, tj, tw = [], [], []
    while heap and len(tw) < n - 1:
        w, a, b, v = heapq.heappop(heap)
        if in_tree[v]:
            continue
        in_tree[v] = True
        ti.append(a)
        tj.append(b)
        tw.append(w)
        for edge in adjacency[v]:
            if not in_tree[edge[3]]:
                heapq.heappush(heap, edge)
    if len(tw) < n - 1:
        missing = int(np.flatnonzero(~in_tree)[0])
        raise ValueError(f"graph is disconnected: node {missing} is unreachable from node 0")
    return MstDistance(n, EdgeList(np.array(ti, dtype=np.int64), np.array(tj, dtype=np.int64),
                                   np.array(tw, dtype=np.float64)))


def mst_from_points(A) -> MstDistance:
    """MST of the implicit complete Euclidean graph over the rows of ``A``.

    Dense O(n^2) Prim that never materialises the edge list; it selects the
    same tree as ``minimum_spanning_tree(build_complete_graph(A), n)``,
    including the tie-break on ``(i, j)``.
    """
    A = _as_points(A)
    n = A.shape[0]
    if n < 2:
        raise ValueError("need at least 2 observations to build a graph")
    big = np.iinfo(np.int64).max
    best_w = np.full(n, np.inf)
    best_a = np.full(n, big, dtype=np.int64)
    best_b = np.full(n, big, dtype=np.int64)
    outside = np.ones(n, dtype=bool)
    nodes = np.arange(n)
    ti = np.empty(n - 1, dtype=np.int64)
    tj = np.empty(n - 1, dtype=np.int64)
    tw = np.empty(n - 1)

    current = 0
    for step in range(n - 1):
        outside[current] = False
        d = _distances_from(A, current)
        a = np.minimum(nodes, current)
        b = np.maximum(nodes, current)
        better = outside & ((d < best_w) | ((d == best_w) & ((a < best_a) | ((a == best_a) & (b < best_b)))))
        best_w[better] = d[better]
        best_a[better] = a[better]
        best_b[better] = b[better]

        cand = np.flatnonzero(outside)
        wmin = best_w[cand].min()
        cand = cand[best_w[cand] == wmin]
        if len(cand) > 1:
            cand = cand[np.lexsort((best_b[cand], best_a[cand]))]
        current = int(cand[0])
        ti[step], tj[step], tw[step] = best_a[current], best_b[current], best_w[current]
    return MstDistance(n, EdgeList(ti, tj, tw))


def _invert_lengths(w: np.ndarray, floor: float | None = None, level: int = logging.WARNING) -> np.ndarray:
    small = w < DUPLICATE_EPS
    if floor is None:
        positive = w[~small]
        floor = float(positive.min()) if len(positive) else 1.0
    if np.any(small):
        logger.log(
            level, "%d zero-length MST edge(s) from duplicate observations; similarity capped at %g",
            int(small.sum()), 1.0 / floor,
        )
    return 1.0 / np.where(small, floor, np.maximum(w, floor))


def similarity_from_mst(m: MstDistance, duplicate_length: float | None = None) -> SparseSimilarity:
    """Invert the tree edge lengths: ``S_ij = 1 / M_ij`` on tree edges, else 0.

    Zero-length edges cannot be inverted. They are given ``duplicate_length``,
    which defaults to the shortest positive edge of the same tree (or 1 when
    every edge has zero length), so duplicates are as similar as the closest
    distinct pair but never dominate ``S``. Passing ``duplicate_length``
    also caps every similarity at ``1 / duplicate_length``.
    """
    e = m.edges
    s = _invert_lengths(e.weight, duplicate_length)
    rows = np.concatenate([e.i, e.j])
    cols = np.concatenate([e.j, e.i])
    S = sp.csr_matrix((np.concatenate([s, s]), (rows, cols)), shape=(m.n, m.n))
    S.sort_indices()
    degree = np.asarray(S.sum(axis=1)).ravel()
    return SparseSimilarity(S, degree)


def mst_similarity(A, duplicate_length: float | None = None) -> SparseSimilarity:
    """Shortcut for ``similarity_from_mst(mst_from_points(A))``."""
    return similarity_from_mst(mst_from_points(A), duplicate_length)


def local_mst_similarity(buffer, newest_index: int = -1,
                         duplicate_length: float | None = None) -> np.ndarray:
    """Similarity row of one buffered observation from an MST over the buffer.

    Returns a vector of length ``len(buffer)`` holding the inverted tree-edge
    lengths to the observation's tree neighbours and zeros elsewhere
    (including its own position).
    """
    buffer = _as_points(buffer)
    m = buffer.shape[0]
    if m < 2:
        raise ValueError("local MST needs the newest observation and at least one neighbour")
    d = newest_index % m
    e = mst_from_points(buffer).edges
    row = np.zeros(m)
    touching = (e.i == d) | (e.j == d)
    other = np.where(e.i[touching] == d, e.j[touching], e.i[touching])
    # called once per streamed observation, so keep duplicate reports out of the default log
    inverted = _invert_lengths(e.weight, duplicate_length, logging.DEBUG)
    row[other] = inverted[touching]
    return row


def write_edge_list(m: MstDistance, path: str | PathLike) -> None:
    """Debug dump: one ``i j weight`` line per tree edge, 0-based indices."""
    with open(path, "w") as fh:
        for a, b, w in m.edges.triples():
            fh.write(f"{a} {b} {w:.17g}\n")


def read_edge_list(path: str | PathLike, n: int) -> MstDistance:
    triples = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                a, b, w = line.split()
                triples.append((int(a), int(b), float(w)))
    return MstDistance(n, EdgeList.from_triples(triples))
