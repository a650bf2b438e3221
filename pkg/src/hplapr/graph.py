"""Simple graphs, kNN hypergraphs and their Laplacian / adjacency matrices.

Everything is dense numpy; the intended sizes are a few thousand vertices
at most.  Symmetric outputs are built so that ``M[i, j] == M[j, i]`` holds
bit for bit, never by filling two triangles independently.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform

__all__ = [
    "FeatureTable",
    "WeightedGraph",
    "Hypergraph",
    "LaplacianMatrix",
    "GraphError",
    "pairwise_sq_distances",
    "heat_bandwidth",
    "build_knn_graph",
    "build_knn_hypergraph",
    "make_hypergraph",
    "hypergraph_degrees",
    "hypergraph_laplacian",
    "hypergraph_adjacency",
    "unnormalized_laplacian",
    "normalized_laplacian",
]

WEIGHT_POLICIES = ("gaussian", "unit")


class GraphError(ValueError):
    """Invalid graph / hypergraph input."""


@dataclass
class FeatureTable:
    features: np.ndarray
    class_labels: Optional[np.ndarray] = None
    group_labels: Optional[np.ndarray] = None
    ids: Optional[list] = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
            raise GraphError(f"features must be an N x d matrix with N >= 2, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise GraphError("features contain non-finite entries")
        self.features = X
        n = X.shape[0]
        for name in ("class_labels", "group_labels"):
            lab = getattr(self, name)
            if lab is not None:
                lab = np.asarray(lab)
                if lab.shape != (n,):
                    raise GraphError(f"{name} must have one entry per row ({n}), got shape {lab.shape}")
                setattr(self, name, lab)
        if self.ids is None:
            self.ids = [str(i) for i in range(n)]
        elif len(self.ids) != n:
            raise GraphError("ids must have one entry per row")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def subset(self, rows) -> "FeatureTable":
        rows = np.asarray(rows, dtype=int)
        pick = lambda a: None if a is None else a[rows]
        return FeatureTable(
            self.features[rows],
            pick(self.class_labels),
            pick(self.group_labels),
            [self.ids[i] for i in rows],
        )


@dataclass
class WeightedGraph:
    """Symmetric nonnegative affinity matrix with zero diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise GraphError(f"weights must be square, got shape {W.shape}")
        if not np.array_equal(W, W.T):
            raise GraphError("weights must be exactly symmetric")
        if np.any(W < 0) or np.any(np.diag(W) != 0):
            raise GraphError("weights must be nonnegative with a zero diagonal")
        self.weights = W

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass
class Hypergraph:
    incidence: np.ndarray
    edge_weights: np.ndarray
    vertex_degrees: np.ndarray = field(default=None)
    edge_degrees: np.ndarray = field(default=None)

    def __post_init__(self):
        H = np.asarray(self.incidence)
        if H.ndim != 2:
            raise GraphError("incidence must be an N x M matrix")
        if not np.all((H == 0) | (H == 1)):
            raise GraphError("incidence must be binary")
        self.incidence = H.astype(float)
        self.edge_weights = np.asarray(self.edge_weights, dtype=float)
        dv, de = hypergraph_degrees(self.incidence, self.edge_weights)
        if np.any(de < 2):
            bad = int(np.flatnonzero(de < 2)[0])
            raise GraphError(f"hyperedge {bad} has fewer than 2 vertices")
        if self.vertex_degrees is not None and not np.array_equal(self.vertex_degrees, dv):
            raise GraphError("stored vertex degrees disagree with incidence and weights")
        if self.edge_degrees is not None and not np.array_equal(self.edge_degrees, de):
            raise GraphError("stored edge degrees disagree with incidence")
        self.vertex_degrees = dv
        self.edge_degrees = de

    @property
    def n(self) -> int:
        return self.incidence.shape[0]

    @property
    def m(self) -> int:
        return self.incidence.shape[1]


@dataclass
class LaplacianMatrix:
    matrix: np.ndarray
    kind: str  # "normalized-hypergraph" | "normalized-simple" | "unnormalized-simple"


def make_hypergraph(incidence, edge_weights=None) -> Hypergraph:
    H = np.asarray(incidence)
    if edge_weights is None:
        edge_weights = np.ones(H.shape[1])
    return Hypergraph(H, edge_weights)


def _as_features(features) -> np.ndarray:
    if isinstance(features, FeatureTable):
        return features.features
    return FeatureTable(features).features


def pairwise_sq_distances(X) -> np.ndarray:
    """Exactly symmetric matrix of squared Euclidean distances (zero diagonal)."""
    X = np.asarray(X, dtype=float)
    return squareform(pdist(X, "sqeuclidean"))


def heat_bandwidth(sq_dist: np.ndarray) -> float:
    """sigma^2 for the heat kernel: mean squared distance over distinct pairs.

    Falls back to 1 when every point coincides.
    """
    n = sq_dist.shape[0]
    iu = np.triu_indices(n, 1)
    s2 = float(np.mean(sq_dist[iu])) if n > 1 else 0.0
    return s2 if s2 > 0 else 1.0


def _neighbor_order(sq_dist: np.ndarray, candidates: np.ndarray, v: int) -> np.ndarray:
    # stable sort on index-ordered candidates -> ties go to the smaller row index
    cand = candidates[candidates != v]
    order = np.argsort(sq_dist[v, cand], kind="stable")
    return cand[order]


def _check_policy(weight_policy: str):
    if weight_policy not in WEIGHT_POLICIES:
        raise GraphError(f"unknown weight policy {weight_policy!r}; expected one of {WEIGHT_POLICIES}")


def build_knn_graph(features, k: int, weight_policy: str = "gaussian") -> WeightedGraph:
    """Union-symmetrized kNN graph.

    ``i -- j`` is an edge when ``j`` is among the ``k`` nearest neighbours of
    ``i`` or vice versa.  Gaussian weights are ``exp(-|xi - xj|^2 / sigma^2)``
    with ``sigma^2`` the mean squared pairwise distance of the table.
    """
    X = _as_features(features)
    n = X.shape[0]
    _check_policy(weight_policy)
    if not 1 <= k < n:
        raise GraphError(f"k must satisfy 1 <= k < N={n}, got {k}")
    D2 = pairwise_sq_distances(X)
    everyone = np.arange(n)
    mask = np.zeros((n, n), dtype=bool)
    for v in range(n):
        mask[v, _neighbor_order(D2, everyone, v)[:k]] = True
    mask |= mask.T
    if weight_policy == "unit":
        kernel = np.ones((n, n))
    else:
        kernel = np.exp(-D2 / heat_bandwidth(D2))
    W = np.where(mask, kernel, 0.0)
    np.fill_diagonal(W, 0.0)
    return WeightedGraph(W)


def build_knn_hypergraph(features, k: int, weight_policy: str = "gaussian",
                         group_constrained: bool = False, groups=None) -> Hypergraph:
    """One hyperedge per vertex: the vertex plus its ``k`` nearest neighbours.

    With ``group_constrained`` the neighbours are searched only inside the
    vertex's own group, so no hyperedge crosses a group boundary.  Gaussian
    hyperedge weights are the mean heat-kernel affinity over the distinct
    pairs of the hyperedge.
    """
    X = _as_features(features)
    n = X.shape[0]
    _check_policy(weight_policy)
    if not 1 <= k < n:
        raise GraphError(f"k must satisfy 1 <= k < N={n}, got {k}")
    if group_constrained:
        if groups is None and isinstance(features, FeatureTable):
            groups = features.group_labels
        if groups is None:
            raise GraphError("group-constrained hyperedges need group labels")
        groups = np.asarray(groups)
        members = {}
        for g in np.unique(groups).tolist():
            idx = np.flatnonzero(groups == g)
            if idx.size <= k:
                raise GraphError(f"group {g!r} has {idx.size} members; needs more than k={k}")
            members[g] = idx
    D2 = pairwise_sq_distances(X)
    everyone = np.arange(n)
    H = np.zeros((n, n))
    for v in range(n):
        cand = members[groups[v]] if group_constrained else everyone
        H[v, v] = 1.0
        H[_neighbor_order(D2, cand, v)[:k], v] = 1.0
    if weight_policy == "unit":
        w = np.ones(n)
    else:
        A = np.exp(-D2 / heat_bandwidth(D2))
        w = np.empty(n)
        for e in range(n):
            idx = np.flatnonzero(H[:, e])
            sub = A[np.ix_(idx, idx)]
            iu = np.triu_indices(idx.size, 1)
            w[e] = sub[iu].mean()
    return Hypergraph(H, w)


def hypergraph_degrees(incidence, edge_weights):
    """Vertex degrees ``d(v) = sum_e w(e) h(v, e)`` and edge degrees ``|e|``."""
    H = np.asarray(incidence, dtype=float)
    w = np.asarray(edge_weights, dtype=float)
    if w.shape != (H.shape[1],):
        raise GraphError(f"expected {H.shape[1]} edge weights, got shape {w.shape}")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise GraphError("edge weights must be positive and finite")
    dv = H @ w
    de = H.sum(axis=0)
    if np.any(dv <= 0):
        bad = int(np.flatnonzero(dv <= 0)[0])
        raise GraphError(f"vertex {bad} belongs to no hyperedge (degree 0)")
    return dv, de


def _sym_scale(M: np.ndarray, s: np.ndarray) -> np.ndarray:
    # diag(s) M diag(s) with the outer product formed first keeps exact symmetry
    return M * np.outer(s, s)


def _co_membership(hg: Hypergraph, edge_scale: np.ndarray) -> np.ndarray:
    M = (hg.incidence * edge_scale) @ hg.incidence.T
    return (M + M.T) / 2


def hypergraph_laplacian(hg: Hypergraph) -> LaplacianMatrix:
    """Normalized hypergraph Laplacian ``I - Dv^-1/2 H W De^-1 H^T Dv^-1/2``."""
    if np.any(hg.vertex_degrees <= 0):
        raise GraphError("hypergraph has a zero-degree vertex")
    theta = _co_membership(hg, hg.edge_weights / hg.edge_degrees)
    L = np.eye(hg.n) - _sym_scale(theta, 1.0 / np.sqrt(hg.vertex_degrees))
    return LaplacianMatrix(L, "normalized-hypergraph")


def hypergraph_adjacency(hg: Hypergraph) -> WeightedGraph:
    """Pairwise co-membership weights ``H W H^T - Dv``."""
    A = _co_membership(hg, hg.edge_weights)
    # (H W H^T)_vv is exactly d(v); the subtraction leaves a zero diagonal
    np.fill_diagonal(A, 0.0)
    return WeightedGraph(A)


def _weights(g) -> np.ndarray:
    return g.weights if isinstance(g, WeightedGraph) else WeightedGraph(g).weights


def unnormalized_laplacian(g) -> LaplacianMatrix:
    W = _weights(g)
    return LaplacianMatrix(np.diag(W.sum(axis=1)) - W, "unnormalized-simple")


def normalized_laplacian(g) -> LaplacianMatrix:
    """Simple-graph Laplacian in the hypergraph normalization, ``(I - D^-1/2 W D^-1/2) / 2``.

    This is the hypergraph Laplacian of the graph viewed as a 2-uniform
    hypergraph (every edge degree equal to 2).
    """
    W = _weights(g)
    d = W.sum(axis=1)
    if np.any(d <= 0):
        raise GraphError(f"vertex {int(np.flatnonzero(d <= 0)[0])} is isolated")
    L = 0.5 * (np.eye(W.shape[0]) - _sym_scale(W, 1.0 / np.sqrt(d)))
    return LaplacianMatrix(L, "normalized-simple")
