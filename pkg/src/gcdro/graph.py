"""Symmetric weighted k-nearest-neighbor graph over covariates.

The graph is stored in CSR form over the *directed* edge list that contains
both orientations of every undirected edge, sorted by (source, target).
All downstream edge sums run over this orientation-closed list, which is the
convention the risk and flow modules rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

WEIGHT_SCHEMES = ("gaussian", "binary")

_W_FLOOR = 1e-300  # keeps kernel weights strictly positive under underflow


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Graph:
    """Orientation-closed weighted graph in CSR layout.

    ``row[e]``/``col[e]`` give the directed edge endpoints, ``w[e]`` the
    symmetric positive weight, and ``rev[e]`` the index of the opposite
    orientation of the same undirected edge.
    """

    n: int
    indptr: np.ndarray
    col: np.ndarray
    row: np.ndarray
    w: np.ndarray
    rev: np.ndarray
    bandwidth: float
    k: int
    scheme: str

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(np.asarray(self.indptr, dtype=np.int64)))
        object.__setattr__(self, "col", _frozen(np.asarray(self.col, dtype=np.int64)))
        object.__setattr__(self, "row", _frozen(np.asarray(self.row, dtype=np.int64)))
        object.__setattr__(self, "w", _frozen(np.asarray(self.w, dtype=np.float64)))
        object.__setattr__(self, "rev", _frozen(np.asarray(self.rev, dtype=np.int64)))

    @property
    def n_edges(self) -> int:
        """Number of directed edges (twice the undirected count)."""
        return self.col.shape[0]

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) array of directed (i, j) pairs."""
        return np.column_stack([self.row, self.col])

    def neighbors(self, i: int):
        """(neighbor ids, weights) of node ``i``."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.col[lo:hi], self.w[lo:hi]

    def validate(self, tol: float = 1e-12) -> None:
        """Check structural invariants; raises ValueError on violation."""
        if np.any(self.row == self.col):
            raise ValueError("graph has a self-loop")
        if np.any(self.w <= 0):
            raise ValueError("graph has a non-positive weight")
        deg = np.diff(self.indptr)
        if deg.min() < 1:
            raise ValueError("graph has an isolated node")
        if np.any(np.abs(self.w - self.w[self.rev]) > tol):
            raise ValueError("graph weights are not symmetric")
        if np.any(self.row[self.rev] != self.col) or np.any(self.col[self.rev] != self.row):
            raise ValueError("edge list is not orientation-closed")


def _csr_from_pairs(n, src, dst, wgt, bandwidth, k, scheme) -> Graph:
    order = np.lexsort((dst, src))
    src, dst, wgt = src[order], dst[order], wgt[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)

    # reverse-edge lookup: position of (dst, src) in the lexsorted list
    e = len(src)
    keys = src * n + dst
    rev_keys = dst * n + src
    rev = np.searchsorted(keys, rev_keys)
    if e and (np.any(rev >= e) or np.any(keys[np.minimum(rev, e - 1)] != rev_keys)):
        raise ValueError("edge list is not orientation-closed")

    return Graph(
        n=n,
        indptr=indptr,
        col=dst,
        row=src,
        w=wgt,
        rev=rev,
        bandwidth=bandwidth,
        k=k,
        scheme=scheme,
    )


def build_knn(X: np.ndarray, k: int = 10, scheme: str = "gaussian") -> Graph:
    """Union-symmetrized kNN graph on Euclidean covariate distances.

    Each node picks its k nearest neighbors (self excluded, distance ties
    broken toward the smaller node index) and the directed picks are closed
    under orientation reversal.  Only X is read, never the targets.

    Weights: ``gaussian`` puts w_ij = exp(-d_ij^2 / (2 h^2)) with h the
    median picked-edge length; ``binary`` puts w_ij = 1.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ConfigError("need at least 2 points to build a graph")
    if not 1 <= k < n:
        raise ConfigError(f"k must satisfy 1 <= k < n (got k={k}, n={n})")
    if scheme not in WEIGHT_SCHEMES:
        raise ConfigError(f"unknown weight scheme {scheme!r}")

    sq_norms = np.einsum("ij,ij->i", X, X)
    nbr = np.empty((n, k), dtype=np.int64)
    nbr_d2 = np.empty((n, k), dtype=np.float64)
    chunk = max(1, min(n, int(2e7) // max(n, 1)))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        d2 = sq_norms[lo:hi, None] + sq_norms[None, :] - 2.0 * (X[lo:hi] @ X.T)
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(lo, hi) - lo, np.arange(lo, hi)] = np.inf
        # stable sort on distances == ties broken by smaller node index
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        nbr[lo:hi] = order
        nbr_d2[lo:hi] = np.take_along_axis(d2, order, axis=1)

    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = nbr.reshape(-1)
    d2_flat = nbr_d2.reshape(-1)

    # close under orientation reversal, deduplicating on undirected pairs
    a = np.minimum(src, dst)
    b = np.maximum(src, dst)
    und_keys, first = np.unique(a * n + b, return_index=True)
    ua, ub = und_keys // n, und_keys % n
    und_d2 = d2_flat[first]

    if scheme == "binary":
        und_w = np.ones(len(und_keys))
        bandwidth = 0.0
    else:
        d = np.sqrt(und_d2)
        bandwidth = float(np.median(d))
        if bandwidth == 0.0:
            pos = d[d > 0]
            bandwidth = float(pos.mean()) if pos.size else 0.0
        if bandwidth == 0.0:
            und_w = np.ones(len(und_keys))
        else:
            und_w = np.exp(-und_d2 / (2.0 * bandwidth * bandwidth))
            np.maximum(und_w, _W_FLOOR, out=und_w)

    src2 = np.concatenate([ua, ub])
    dst2 = np.concatenate([ub, ua])
    w2 = np.concatenate([und_w, und_w])
    return _csr_from_pairs(n, src2, dst2, w2, bandwidth, k, scheme)


def graph_from_edges(n: int, edges, weights=None, *, bandwidth: float = 0.0) -> Graph:
    """Build a Graph from an undirected edge list; mainly for tests and demos."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if weights is None:
        weights = np.ones(len(edges))
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(edges[:, 0] == edges[:, 1]):
        raise ValueError("self-loops are not allowed")
    a = np.minimum(edges[:, 0], edges[:, 1])
    b = np.maximum(edges[:, 0], edges[:, 1])
    keys, first = np.unique(a * n + b, return_index=True)
    if len(keys) != len(edges):
        raise ValueError("duplicate undirected edges")
    src = np.concatenate([a, b])
    dst = np.concatenate([b, a])
    w = np.concatenate([weights, weights])
    g = _csr_from_pairs(n, src, dst, w, bandwidth, 0, "explicit")
    g.validate()
    return g


@dataclass(frozen=True)
class DegreeStats:
    min: int
    max: int
    mean: float


def degree_stats(g: Graph) -> DegreeStats:
    """Undirected degree statistics (each undirected edge counts once per endpoint)."""
    deg = np.diff(g.indptr)
    return DegreeStats(min=int(deg.min()), max=int(deg.max()), mean=float(deg.mean()))


def dump_csv(g: Graph, path) -> None:
    """Write the undirected edge set as CSV with a leading metadata comment."""
    mask = g.row < g.col
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# k={g.k},scheme={g.scheme},bandwidth={g.bandwidth!r}\n")
        fh.write("i,j,w\n")
        for i, j, w in zip(g.row[mask], g.col[mask], g.w[mask]):
            fh.write(f"{i},{j},{w!r}\n")
