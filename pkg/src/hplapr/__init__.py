"""Graph, hypergraph and p-Laplacian manifold regularization for kernel logistic regression."""

__version__ = "0.1.0"

from .graph import (  # noqa: F401
    FeatureTable,
    Hypergraph,
    LaplacianMatrix,
    WeightedGraph,
    build_knn_graph,
    build_knn_hypergraph,
    hypergraph_adjacency,
    hypergraph_degrees,
    hypergraph_laplacian,
    normalized_laplacian,
    unnormalized_laplacian,
)
from .plap import EigenSystem, PLapConfig, approximate_p_laplacian  # noqa: F401
from .model import KernelSpec, SSLProblem, TrainedModel, predict, train, train_one_vs_rest  # noqa: F401
