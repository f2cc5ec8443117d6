"""k-NN coherence graph over correspondences and its Laplacian.

Neighbors are found in the 4D "bilateral" space ``(x, y, u, v)``, so two
correspondences are close only if both their source positions and their
target positions are close. Edge weights use a Gaussian kernel
``exp(-d**2 / sigma**2)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .core import CorrespondenceSet, LapMotionError

__all__ = [
    "GraphError",
    "CoherenceGraph",
    "LaplacianMatrix",
    "knn",
    "build_graph",
    "laplacian",
    "load_graph_json",
]

DEFAULT_K = 8
DEFAULT_SIGMA = 0.1

_SYMMETRIZE = ("union", "mutual")
_KINDS = ("plain", "normalized")


class GraphError(LapMotionError, ValueError):
    pass


def _as_points(points) -> np.ndarray:
    if isinstance(points, CorrespondenceSet):
        return points.coords
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise GraphError(f"points must be a 2D array, got shape {pts.shape}")
    return pts


def _sq_dists(block: np.ndarray, points: np.ndarray) -> np.ndarray:
    # Summing the squared coordinate differences in a fixed order keeps
    # d2[i, j] and d2[j, i] bitwise identical.
    diff = block[:, None, :] - points[None, :, :]
    diff *= diff
    out = diff[..., 0].copy()
    for c in range(1, diff.shape[-1]):
        out += diff[..., c]
    return out


def knn(points, k: int, chunk: int = 256):
    """Exact k nearest neighbors of every point, excluding the point itself.

    Ties in distance are broken by the lower point index, so the result is
    deterministic for any input.

    Returns
    -------
    index : ndarray of int, shape (N, k)
        Neighbor indices, nearest first.
    sq_dist : ndarray, shape (N, k)
        Matching squared Euclidean distances.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if k < 1:
        raise GraphError(f"k must be positive, got {k}")
    if n <= k:
        raise GraphError(f"need more than k={k} points to find k distinct "
                         f"neighbors, got N={n}")
    index = np.empty((n, k), dtype=np.int64)
    sq_dist = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = _sq_dists(pts[start:stop], pts)
        local = np.arange(stop - start)
        d2[local, start + local] = np.inf

        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        pd = np.take_along_axis(d2, part, axis=1)
        order = np.lexsort((part, pd), axis=1)
        part = np.take_along_axis(part, order, axis=1)
        pd = np.take_along_axis(pd, order, axis=1)

        # argpartition picks arbitrarily among points tied with the k-th
        # distance; redo those rows with an index-stable selection.
        kth = pd[:, -1]
        n_le = np.count_nonzero(d2 <= kth[:, None], axis=1)
        for r in np.flatnonzero(n_le > k):
            cand = np.flatnonzero(d2[r] <= kth[r])
            cand = cand[np.lexsort((cand, d2[r, cand]))][:k]
            part[r] = cand
            pd[r] = d2[r, cand]

        index[start:stop] = part
        sq_dist[start:stop] = pd
    return index, sq_dist


@dataclass(frozen=True, eq=False)
class CoherenceGraph:
    """Weighted undirected graph on N correspondences.

    ``adjacency`` is a symmetric CSR matrix with sorted column indices and
    no stored zeros or self-loops.
    """

    adjacency: sp.csr_matrix
    k: Optional[int] = None
    sigma: Optional[float] = None
    symmetrize: Optional[str] = None

    def __post_init__(self):
        a = sp.csr_matrix(self.adjacency, dtype=np.float64, copy=True)
        if a.shape[0] != a.shape[1]:
            raise GraphError(f"adjacency must be square, got {a.shape}")
        a.setdiag(0)
        a.eliminate_zeros()
        a.sort_indices()
        object.__setattr__(self, "adjacency", a)

    @classmethod
    def from_edges(cls, n: int, edges, **params) -> "CoherenceGraph":
        """Build from undirected ``(i, j, w)`` triples; each pair listed once."""
        edges = list(edges)
        if not edges:
            return cls(sp.csr_matrix((n, n)), **params)
        i, j, w = (np.asarray(col) for col in zip(*edges))
        a = sp.coo_matrix((w, (i.astype(int), j.astype(int))), shape=(n, n))
        return cls(a + a.T, **params)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return self.adjacency.nnz // 2

    @property
    def degree(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def neighbors(self, i: int):
        a = self.adjacency
        lo, hi = a.indptr[i], a.indptr[i + 1]
        return a.indices[lo:hi], a.data[lo:hi]

    def edges(self, i: int):
        idx, w = self.neighbors(i)
        return [(int(j), float(wij)) for j, wij in zip(idx, w)]

    def edge_list(self):
        """All stored ``(i, j, w)`` entries, both directions, sorted by (i, j)."""
        coo = self.adjacency.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[t]), int(coo.col[t]), float(coo.data[t])) for t in order]

    def n_components(self) -> int:
        return connected_components(self.adjacency, directed=False)[0]

    def is_connected(self) -> bool:
        return self.n_components() == 1

    def isolated(self) -> np.ndarray:
        return np.flatnonzero(np.diff(self.adjacency.indptr) == 0)

    def permuted(self, perm) -> "CoherenceGraph":
        """Relabel nodes so that new node ``t`` is old node ``perm[t]``."""
        perm = np.asarray(perm)
        return CoherenceGraph(self.adjacency[perm][:, perm], self.k, self.sigma,
                              self.symmetrize)

    def digest(self) -> str:
        """Content hash, used to key cached spectral bases."""
        a = self.adjacency
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        for arr in (a.indptr.astype(np.int64), a.indices.astype(np.int64), a.data):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "sigma": self.sigma,
            "edges": [[i, j, w] for i, j, w in self.edge_list()],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")


def load_graph_json(path) -> CoherenceGraph:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    n = int(obj["n"])
    edges = obj["edges"]
    if edges:
        i, j, w = (np.asarray(c) for c in zip(*edges))
        a = sp.csr_matrix((w.astype(float), (i.astype(int), j.astype(int))), shape=(n, n))
    else:
        a = sp.csr_matrix((n, n))
    return CoherenceGraph(a, obj.get("k"), obj.get("sigma"))


def build_graph(points, k: int = DEFAULT_K, sigma: float = DEFAULT_SIGMA,
                symmetrize: str = "union") -> CoherenceGraph:
    """Connect every correspondence to its k nearest neighbors in 4D.

    Parameters
    ----------
    points : CorrespondenceSet or ndarray, shape (N, 4)
    k : int
        Neighbors per node before symmetrization. Requires ``k < N``.
    sigma : float
        Kernel bandwidth, in normalized coordinate units.
    symmetrize : {"union", "mutual"}
        ``union`` keeps (i, j) if either endpoint lists the other among its
        k nearest; ``mutual`` requires both. ``mutual`` can leave nodes with
        no edges.

    Notes
    -----
    Weights that underflow to exactly zero (distances beyond roughly
    ``27 * sigma``) are dropped from the edge set.
    """
    if not sigma > 0 or not np.isfinite(sigma):
        raise GraphError(f"sigma must be a positive finite number, got {sigma}")
    if symmetrize not in _SYMMETRIZE:
        raise GraphError(f"symmetrize must be one of {_SYMMETRIZE}, got {symmetrize!r}")
    pts = _as_points(points)
    n = pts.shape[0]
    if n < 2:
        raise GraphError("need at least two correspondences to build a graph")
    index, _ = knn(pts, k)

    rows = np.repeat(np.arange(n), k)
    directed = sp.csr_matrix((np.ones(n * k, dtype=np.int8), (rows, index.ravel())),
                             shape=(n, n))
    if symmetrize == "union":
        member = directed + directed.T
    else:
        member = directed.multiply(directed.T)
    member = sp.coo_matrix(member)
    i, j = member.row, member.col

    diff = pts[i] - pts[j]
    diff *= diff
    d2 = diff[:, 0].copy()
    for c in range(1, diff.shape[1]):
        d2 += diff[:, c]
    w = np.exp(-d2 / (sigma * sigma))
    adjacency = sp.csr_matrix((w, (i, j)), shape=(n, n))
    return CoherenceGraph(adjacency, k, float(sigma), symmetrize)


@dataclass(frozen=True, eq=False)
class LaplacianMatrix:
    kind: str
    matrix: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def quadratic_form(self, v: np.ndarray) -> float:
        """``trace(v.T @ L @ v)``; for a vector this is ``v @ L @ v``."""
        return float(np.sum(v * (self.matrix @ v)))


def laplacian(g: CoherenceGraph, kind: str = "plain") -> LaplacianMatrix:
    """Graph Laplacian ``D - A`` or its symmetric normalization.

    Isolated nodes get an all-zero row and column in both forms.
    """
    if kind not in _KINDS:
        raise GraphError(f"kind must be one of {_KINDS}, got {kind!r}")
    a = g.adjacency
    d = g.degree
    lap = (sp.diags(d) - a).tocsr()
    if kind == "normalized":
        scale = np.zeros_like(d)
        pos = d > 0
        scale[pos] = 1.0 / np.sqrt(d[pos])
        s = sp.diags(scale)
        lap = (s @ lap @ s).tocsr()
    lap.eliminate_zeros()
    lap.sort_indices()
    return LaplacianMatrix(kind, lap)
