"""Approximate (hypergraph) p-Laplacian via an orthonormal eigenvector embedding.

The p-Laplacian is nonlinear, so it has no matrix.  We approximate it by a
full set of p-eigenpairs ``(f_k, lambda_k)`` and the rank-K matrix
``F diag(lambda) F^T``.  The eigenvectors are found by minimising the sum of
per-column p-Dirichlet ratios over matrices with orthonormal columns,
starting from eigenvectors of an ordinary (p = 2) Laplacian.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .graph import LaplacianMatrix, WeightedGraph

logger = logging.getLogger(__name__)

__all__ = [
    "PLapConfig",
    "EigenSystem",
    "phi_p",
    "p_dirichlet_ratio",
    "embedding_objective",
    "embedding_gradient",
    "project_gradient",
    "orthonormalize",
    "descend_embedding",
    "approximate_p_laplacian",
    "default_embedding_dim",
]

MAX_HALVINGS = 30


def default_embedding_dim(n: int) -> int:
    """Full rank at desk scale, 64 columns beyond that."""
    return n if n <= 500 else min(n, 64)


@dataclass
class PLapConfig:
    p: float = 2.0
    K: int | None = None
    max_iters: int = 2000
    rel_tol: float = 1e-6
    step_scale: float = 0.01
    grad_tol: float = 1e-9

    def __post_init__(self):
        if not 1.0 <= self.p <= 3.0:
            raise ValueError(f"p must lie in [1, 3], got {self.p}")
        if self.K is not None and self.K < 1:
            raise ValueError(f"embedding dimension must be >= 1, got {self.K}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.rel_tol <= 0 or self.step_scale <= 0 or self.grad_tol < 0:
            raise ValueError("rel_tol and step_scale must be positive, grad_tol nonnegative")


@dataclass
class EigenSystem:
    vectors: np.ndarray
    values: np.ndarray
    p: float
    source_weights: WeightedGraph
    converged: bool = True
    iterations: int = 0
    objective_history: list = field(default_factory=list)

    def reconstruct(self) -> np.ndarray:
        M = (self.vectors * self.values) @ self.vectors.T
        return (M + M.T) / 2

    @property
    def final_objective(self) -> float:
        return self.objective_history[-1] if self.objective_history else float("nan")

    def report(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "final_objective": float(self.final_objective),
            "converged": bool(self.converged),
        }


def phi_p(x, p: float):
    """Odd power map ``|x|^(p-1) sign(x)``; zero at zero for every p >= 1."""
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.abs(x) ** (p - 1.0)
    return out if out.ndim else float(out)


class _Pairs:
    """Edge list of a weighted graph (one entry per unordered pair with w > 0).

    Sums over ordered pairs ``(i, j)`` are twice the sums over this list.
    """

    def __init__(self, g):
        W = g.weights if isinstance(g, WeightedGraph) else np.asarray(g, dtype=float)
        n = W.shape[0]
        i, j = np.nonzero(np.triu(W, 1))
        self.n = n
        self.i, self.j, self.w = i, j, W[i, j]
        rows = np.arange(i.size)
        self.signed = sparse.csr_matrix(
            (np.r_[np.ones(i.size), -np.ones(i.size)], (np.r_[rows, rows], np.r_[i, j])),
            shape=(i.size, n),
        ).T.tocsr()

    def diffs(self, F):
        return F[self.i] - F[self.j]

    def numerators(self, F, p):
        return 2.0 * (self.w @ np.abs(self.diffs(F)) ** p)


def _as_pairs(g) -> _Pairs:
    return g if isinstance(g, _Pairs) else _Pairs(g)


def _column_norms_p(F, p):
    den = np.sum(np.abs(F) ** p, axis=0)
    if np.any(den == 0):
        raise ValueError(f"column {int(np.flatnonzero(den == 0)[0])} is identically zero")
    return den


def p_dirichlet_ratio(f, g, p: float) -> float:
    """``sum_ij w_ij |f_i - f_j|^p / (2 ||f||_p^p)`` over ordered pairs."""
    f = np.asarray(f, dtype=float).reshape(-1, 1)
    pairs = _as_pairs(g)
    return float(pairs.numerators(f, p)[0] / (2.0 * _column_norms_p(f, p)[0]))


def _ratios(F, pairs: _Pairs, p):
    return pairs.numerators(F, p) / _column_norms_p(F, p)


def embedding_objective(F, g, p: float) -> float:
    """Sum over columns of ``sum_ij w_ij |f_i^k - f_j^k|^p / ||f^k||_p^p``."""
    F = np.atleast_2d(np.asarray(F, dtype=float).T).T
    return float(np.sum(_ratios(F, _as_pairs(g), p)))


def embedding_gradient(F, g, p: float) -> np.ndarray:
    """Exact gradient of :func:`embedding_objective` with respect to ``F``.

    Per column ``k`` with ratio ``R_k``::

        dJ/dF_ik = p / ||f^k||_p^p * (2 sum_j w_ij phi_p(F_ik - F_jk) - R_k phi_p(F_ik))
    """
    return _gradient_terms(F, _as_pairs(g), p)[0]


def _gradient_terms(F, pairs: _Pairs, p):
    """Gradient plus the summed magnitude of its two competing terms.

    The magnitude sets the round-off floor below which a projected gradient
    counts as zero.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float).T).T
    den = _column_norms_p(F, p)
    D = pairs.diffs(F)
    R = 2.0 * (pairs.w @ np.abs(D) ** p) / den
    S = 2.0 * (pairs.signed @ (pairs.w[:, None] * phi_p(D, p)))
    T = R * phi_p(F, p)
    scale = float(np.sum((p / den) * (np.abs(S).sum(axis=0) + np.abs(T).sum(axis=0))))
    return (p / den) * (S - T), scale


def project_gradient(F, raw_grad) -> np.ndarray:
    """Remove the component of ``raw_grad`` that rotates within span(F).

    ``G = raw - F raw^T F``; vanishes at constrained stationary points.
    """
    F = np.asarray(F, dtype=float)
    raw_grad = np.asarray(raw_grad, dtype=float)
    if F.shape != raw_grad.shape:
        raise ValueError(f"shape mismatch: {F.shape} vs {raw_grad.shape}")
    return raw_grad - F @ (raw_grad.T @ F)


def orthonormalize(A) -> np.ndarray:
    """Gram-Schmidt orthonormalization of the columns, in column order.

    Computed by QR with the sign convention ``diag(R) > 0`` so that a matrix
    with orthogonal columns keeps its column directions.
    """
    Q, R = np.linalg.qr(A)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def descend_embedding(g, F0, cfg: PLapConfig) -> EigenSystem:
    """Projected gradient descent on the embedding objective from ``F0``.

    Each step uses ``alpha = step_scale * sum|F| / sum|G|`` and re-orthonormalizes;
    alpha is halved until the objective does not increase.
    """
    graph = g if isinstance(g, WeightedGraph) else WeightedGraph(g)
    pairs = _Pairs(graph)
    p = cfg.p
    F = orthonormalize(np.asarray(F0, dtype=float))
    J = float(np.sum(_ratios(F, pairs, p)))
    history = [J]
    converged = False
    it = 0
    while it < cfg.max_iters:
        raw, scale = _gradient_terms(F, pairs, p)
        G = project_gradient(F, raw)
        g_mass = np.abs(G).sum()
        if g_mass == 0 or g_mass <= cfg.grad_tol * scale:
            converged = True
            break
        alpha = cfg.step_scale * np.abs(F).sum() / g_mass
        for _ in range(MAX_HALVINGS + 1):
            F_new = orthonormalize(F - alpha * G)
            J_new = float(np.sum(_ratios(F_new, pairs, p)))
            if J_new <= J:
                break
            alpha /= 2
        else:
            # no descent at any step length we are willing to try
            converged = True
            break
        it += 1
        change = abs(J_new - J)
        F, J = F_new, J_new
        history.append(J)
        if change <= cfg.rel_tol * abs(history[-2]):
            converged = True
            break
    if not converged:
        logger.warning("p-Laplacian embedding did not converge in %d iterations", cfg.max_iters)
    lam = _ratios(F, pairs, p)
    order = np.argsort(lam, kind="stable")
    return EigenSystem(F[:, order], lam[order], p, graph, converged, it, history)


def approximate_p_laplacian(g, init_laplacian, cfg: PLapConfig | None = None):
    """Approximate p-Laplacian of ``g``.

    Starts from the ``K`` eigenvectors of ``init_laplacian`` with the smallest
    eigenvalues.  Returns ``(eigensystem, F diag(lambda) F^T)`` where
    ``lambda_k = sum_ij w_ij |f_i^k - f_j^k|^p / ||f^k||_p^p`` (twice the
    p-Dirichlet ratio).
    """
    cfg = cfg or PLapConfig()
    graph = g if isinstance(g, WeightedGraph) else WeightedGraph(g)
    L0 = init_laplacian.matrix if isinstance(init_laplacian, LaplacianMatrix) else np.asarray(init_laplacian)
    n = graph.n
    if L0.shape != (n, n):
        raise ValueError(f"initial Laplacian has shape {L0.shape}, graph has {n} vertices")
    if not np.allclose(L0, L0.T, rtol=0, atol=1e-10 * max(1.0, np.abs(L0).max())):
        raise ValueError("initial Laplacian must be symmetric")
    K = cfg.K if cfg.K is not None else default_embedding_dim(n)
    if K > n:
        raise ValueError(f"embedding dimension {K} exceeds the number of vertices {n}")
    _, U = np.linalg.eigh((L0 + L0.T) / 2)
    eig = descend_embedding(graph, U[:, :K], cfg)
    return eig, eig.reconstruct()
