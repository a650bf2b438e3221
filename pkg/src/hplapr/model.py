"""Manifold-regularized kernel logistic regression.

The decision function is a kernel expansion over all labeled and unlabeled
training points, ``f(x) = sum_i alpha_i K(x_i, x)``, and ``alpha`` minimises::

    1/l sum_labeled log(1 + exp(-y_i K_i alpha))
        + gamma_A alpha^T K alpha
        + gamma_I / N^2 alpha^T K L K alpha

with ``L`` any symmetric PSD regularizer (graph Laplacian, hypergraph
Laplacian or an approximate p-Laplacian).  Optimisation is Fletcher-Reeves
nonlinear conjugate gradient with a backtracking line search.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from .graph import FeatureTable, heat_bandwidth, pairwise_sq_distances

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class KernelSpec:
    kind: str = "rbf"
    sigma: float | None = None  # rbf width; K(x, y) = exp(-|x - y|^2 / sigma^2)

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and self.sigma is not None and not self.sigma > 0:
            raise ValueError(f"rbf sigma must be positive, got {self.sigma}")

    @classmethod
    def rbf_from_data(cls, X) -> "KernelSpec":
        """RBF kernel whose sigma^2 is the mean squared pairwise distance of ``X``."""
        X = X.features if isinstance(X, FeatureTable) else np.asarray(X, dtype=float)
        return cls("rbf", float(np.sqrt(heat_bandwidth(pairwise_sq_distances(X)))))

    def __call__(self, A, B) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if self.kind == "linear":
            return A @ B.T
        if self.sigma is None:
            raise ValueError("rbf kernel needs sigma; use KernelSpec.rbf_from_data")
        return np.exp(-cdist(A, B, "sqeuclidean") / self.sigma**2)


def gram_matrix(features, kernel: KernelSpec) -> np.ndarray:
    X = features.features if isinstance(features, FeatureTable) else np.asarray(features, dtype=float)
    if kernel.kind == "rbf":
        if kernel.sigma is None:
            raise ValueError("rbf kernel needs sigma")
        return np.exp(-pairwise_sq_distances(X) / kernel.sigma**2)
    G = X @ X.T
    return (G + G.T) / 2


@dataclass
class SSLProblem:
    gram: np.ndarray
    labels: np.ndarray
    labeled_indices: np.ndarray
    regularizer: np.ndarray
    gamma_A: float = 0.0
    gamma_I: float = 0.0
    _klk: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        K = np.asarray(self.gram, dtype=float)
        L = np.asarray(self.regularizer, dtype=float)
        n = K.shape[0]
        if K.shape != (n, n) or L.shape != (n, n):
            raise ValueError(f"gram {K.shape} and regularizer {L.shape} must both be N x N")
        if not np.allclose(K, K.T, rtol=0, atol=1e-10):
            raise ValueError("gram matrix is not symmetric")
        if not np.allclose(L, L.T, rtol=0, atol=1e-10 * max(1.0, np.abs(L).max())):
            raise ValueError("regularizer is not symmetric")
        idx = np.asarray(self.labeled_indices, dtype=int)
        y = np.asarray(self.labels, dtype=float)
        if idx.ndim != 1 or idx.size < 1 or idx.size > n or y.shape != idx.shape:
            raise ValueError("need 1 <= l <= N labels, one per labeled index")
        if np.unique(idx).size != idx.size or idx.min() < 0 or idx.max() >= n:
            raise ValueError("labeled indices must be distinct and in range")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if self.gamma_A < 0 or self.gamma_I < 0:
            raise ValueError("gamma_A and gamma_I must be nonnegative")
        self.gram, self.labels, self.labeled_indices = K, y, idx
        self.regularizer = (L + L.T) / 2
        if self._klk is None:
            M = K @ self.regularizer @ K
            self._klk = (M + M.T) / 2

    @property
    def n(self) -> int:
        return self.gram.shape[0]

    @property
    def l(self) -> int:
        return self.labeled_indices.size

    def relabel(self, labels, labeled_indices=None) -> "SSLProblem":
        """Same Gram/regularizer (shared, not copied) with another label vector."""
        idx = self.labeled_indices if labeled_indices is None else labeled_indices
        return SSLProblem(self.gram, labels, idx, self.regularizer, self.gamma_A, self.gamma_I, self._klk)


def _margins(alpha, prob: SSLProblem):
    return prob.labels * (prob.gram[prob.labeled_indices] @ alpha)


def objective(alpha, prob: SSLProblem) -> float:
    alpha = np.asarray(alpha, dtype=float)
    data = np.mean(np.logaddexp(0.0, -_margins(alpha, prob)))
    ambient = alpha @ prob.gram @ alpha
    intrinsic = alpha @ prob._klk @ alpha
    return float(data + prob.gamma_A * ambient + prob.gamma_I / prob.n**2 * intrinsic)


def gradient(alpha, prob: SSLProblem) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    weights = prob.labels * expit(-_margins(alpha, prob))
    data = -(prob.gram[prob.labeled_indices].T @ weights) / prob.l
    return (data
            + 2.0 * prob.gamma_A * (prob.gram @ alpha)
            + 2.0 * prob.gamma_I / prob.n**2 * (prob._klk @ alpha))


@dataclass
class TrainResult:
    alpha: np.ndarray
    converged: bool
    iterations: int
    objective_history: list


def conjugate_gradient(prob: SSLProblem, epsilon: float = 1e-8, max_iters: int = 5000,
                       armijo: float = 1e-4, max_backtracks: int = 60) -> TrainResult:
    """Fletcher-Reeves CG from ``alpha = 0``; stops when ``|f_new - f_old| <= epsilon``.

    Step lengths come from Armijo backtracking (halving), started at the
    quadratic-interpolation estimate of the line minimum.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    alpha = np.zeros(prob.n)
    f = objective(alpha, prob)
    g = gradient(alpha, prob)
    d = -g
    step = 1.0
    history = [f]
    converged = False
    it = 0
    while it < max_iters:
        gg = g @ g
        if gg == 0.0:
            converged = True
            break
        slope = g @ d
        if not slope < 0:
            d, slope = -g, -gg
        # first trial: minimiser of the quadratic through f(0), f'(0) and f(probe)
        t = 2.0 * step if it else 1.0
        curv = objective(alpha + t * d, prob) - f - slope * t
        if curv > 0:
            t = -slope * t * t / (2.0 * curv)
        for _ in range(max_backtracks):
            trial = alpha + t * d
            f_trial = objective(trial, prob)
            if f_trial <= f + armijo * t * slope:
                break
            t /= 2
        else:
            if np.array_equal(d, -g):
                # not even steepest descent decreases f: numerically stationary
                converged = True
                break
            d = -g
            continue
        step = t
        it += 1
        g_new = gradient(trial, prob)
        d = -g_new + (g_new @ g_new) / gg * d
        delta = abs(f_trial - f)
        alpha, f, g = trial, f_trial, g_new
        history.append(f)
        if delta <= epsilon:
            converged = True
            break
    if not converged:
        logger.warning("conjugate gradient hit max_iters=%d without converging", max_iters)
    return TrainResult(alpha, converged, it, history)


@dataclass
class TrainedModel:
    alpha: np.ndarray
    kernel: KernelSpec
    training_features: np.ndarray
    hyperparams: dict = field(default_factory=dict)
    converged: bool = True
    label: object = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.training_features = np.asarray(self.training_features, dtype=float)
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("alpha has non-finite entries")
        if self.alpha.shape != (self.training_features.shape[0],):
            raise ValueError("alpha must have one coefficient per training point")


def train(prob: SSLProblem, features, kernel: KernelSpec, epsilon: float = 1e-8,
          max_iters: int = 5000, hyperparams: dict | None = None) -> TrainedModel:
    X = features.features if isinstance(features, FeatureTable) else np.asarray(features, dtype=float)
    res = conjugate_gradient(prob, epsilon, max_iters)
    hp = {"gamma_A": prob.gamma_A, "gamma_I": prob.gamma_I}
    hp.update(hyperparams or {})
    return TrainedModel(res.alpha, kernel, X, hp, res.converged)


def predict(model: TrainedModel, x) -> np.ndarray | float:
    """Kernel expansion score(s); a single d-vector gives a float."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    d = model.training_features.shape[1]
    if X.shape[1] != d:
        raise ValueError(f"expected {d} features, got {X.shape[1]}")
    scores = model.kernel(X, model.training_features) @ model.alpha
    return float(scores[0]) if single else scores


def train_one_vs_rest(features, class_labels, labeled_indices, regularizer, kernel: KernelSpec,
                      gamma_A: float, gamma_I: float, classes=None, gram=None,
                      epsilon: float = 1e-8, max_iters: int = 5000,
                      hyperparams: dict | None = None) -> dict:
    """One binary model per class (class vs. rest) sharing Gram and regularizer.

    ``class_labels`` holds the classes of the labeled points, aligned with
    ``labeled_indices``.  Classes listed in ``classes`` that have no labeled
    example are skipped with a warning.
    """
    X = features.features if isinstance(features, FeatureTable) else np.asarray(features, dtype=float)
    y = np.asarray(class_labels)
    present = list(np.unique(y))
    if len(present) < 2:
        raise ValueError("one-vs-rest needs at least two classes among the labeled points")
    classes = present if classes is None else list(classes)
    K = gram_matrix(X, kernel) if gram is None else gram
    base = SSLProblem(K, np.where(y == present[0], 1.0, -1.0), labeled_indices, regularizer, gamma_A, gamma_I)
    hp = {"gamma_A": gamma_A, "gamma_I": gamma_I}
    hp.update(hyperparams or {})
    models = {}
    for c in classes:
        if c not in present:
            logger.warning("class %r has no labeled examples; skipping its model", c)
            continue
        res = conjugate_gradient(base.relabel(np.where(y == c, 1.0, -1.0)), epsilon, max_iters)
        models[c] = TrainedModel(res.alpha, kernel, X, dict(hp), res.converged, c)
    return models


def score_matrix(models: dict, X) -> tuple[list, np.ndarray]:
    """Classes and an (n_points, n_classes) score matrix."""
    classes = list(models)
    return classes, np.column_stack([predict(models[c], np.atleast_2d(X)) for c in classes])


def _py(v):
    return v.item() if isinstance(v, np.generic) else v


def save_models(models: dict, path) -> None:
    first = next(iter(models.values()))
    doc = {
        "format_version": FORMAT_VERSION,
        "kernel": asdict(first.kernel),
        "hyperparams": {k: _py(v) for k, v in first.hyperparams.items()},
        "features": first.training_features.tolist(),
        "models": [
            {"label": _py(c), "alpha": m.alpha.tolist(), "converged": bool(m.converged)}
            for c, m in models.items()
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_models(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {doc.get('format_version')!r}")
    kernel = KernelSpec(**doc["kernel"])
    X = np.asarray(doc["features"], dtype=float)
    return {
        m["label"]: TrainedModel(m["alpha"], kernel, X, dict(doc["hyperparams"]), m["converged"], m["label"])
        for m in doc["models"]
    }
