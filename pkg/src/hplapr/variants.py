"""Regularizer matrices for the four manifold-regularization variants.

============  ===============================================================
``lapr``      normalized simple-graph Laplacian of the kNN graph
``plapr``     approximate p-Laplacian of the kNN graph
``hlapr``     normalized hypergraph Laplacian of the kNN hypergraph
``hplapr``    approximate p-Laplacian of the hypergraph adjacency
============  ===============================================================

The p-Laplacian variants start their eigenvector search from the
eigenvectors of the matching normalized Laplacian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import (
    build_knn_graph,
    build_knn_hypergraph,
    hypergraph_adjacency,
    hypergraph_laplacian,
    normalized_laplacian,
)
from .plap import EigenSystem, PLapConfig, approximate_p_laplacian

VARIANTS = ("lapr", "plapr", "hlapr", "hplapr")
P_VARIANTS = ("plapr", "hplapr")
DISPLAY = {"lapr": "LapR", "plapr": "pLapR", "hlapr": "HLapR", "hplapr": "HpLapR", "supervised": "Supervised"}


@dataclass
class Regularizer:
    variant: str
    matrix: np.ndarray
    eigensystem: EigenSystem | None = None


def check_variant(variant: str) -> str:
    v = variant.lower()
    if v not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return v


def build_regularizer(table, variant: str, k: int, p: float = 2.0, *,
                      weight_policy: str = "gaussian", group_constrained: bool = False,
                      plap: PLapConfig | None = None) -> Regularizer:
    """Regularizer matrix over every row of ``table``.

    ``group_constrained`` only affects the hypergraph variants; ``p`` and
    ``plap`` only the p-Laplacian ones.
    """
    variant = check_variant(variant)
    if variant in ("lapr", "plapr"):
        graph = build_knn_graph(table, k, weight_policy)
        init = normalized_laplacian(graph)
    else:
        hg = build_knn_hypergraph(table, k, weight_policy, group_constrained=group_constrained)
        graph = hypergraph_adjacency(hg)
        init = hypergraph_laplacian(hg)
    if variant not in P_VARIANTS:
        return Regularizer(variant, init.matrix)
    cfg = plap or PLapConfig()
    cfg = PLapConfig(p, cfg.K, cfg.max_iters, cfg.rel_tol, cfg.step_scale, cfg.grad_tol)
    eig, matrix = approximate_p_laplacian(graph, init, cfg)
    return Regularizer(variant, matrix, eig)
