import math

import numpy as np
import pytest

from hplapr.model import (
    KernelSpec,
    SSLProblem,
    TrainedModel,
    conjugate_gradient,
    gradient,
    gram_matrix,
    load_models,
    objective,
    predict,
    save_models,
    score_matrix,
    train,
    train_one_vs_rest,
)


def straight_line_objective(alpha, K, y, idx, L, gA, gI):
    n = K.shape[0]
    total = 0.0
    for t, i in enumerate(idx):
        f = sum(alpha[j] * K[i, j] for j in range(n))
        total += math.log(1.0 + math.exp(-y[t] * f))
    total /= len(idx)
    amb = sum(alpha[i] * K[i, j] * alpha[j] for i in range(n) for j in range(n))
    Ka = [sum(K[i, j] * alpha[j] for j in range(n)) for i in range(n)]
    intr = sum(Ka[i] * L[i, j] * Ka[j] for i in range(n) for j in range(n))
    return total + gA * amb + gI / n**2 * intr


def random_problem(rng, n=6, l=3, gA=0.1, gI=0.5):
    X = rng.normal(size=(n, 2))
    K = gram_matrix(X, KernelSpec.rbf_from_data(X))
    A = np.triu(rng.uniform(0, 1, (n, n)), 1)
    A = A + A.T
    L = np.diag(A.sum(1)) - A
    idx = rng.choice(n, l, replace=False)
    y = rng.choice([-1.0, 1.0], l)
    return X, SSLProblem(K, y, idx, L, gA, gI)


def test_kernels():
    k = KernelSpec("rbf", 1.0)
    assert k([0.3, 0.1], [0.3, 0.1])[0, 0] == 1.0
    assert abs(k([0.0, 0.0], [1.0, 0.0])[0, 0] - math.exp(-1)) < 1e-15
    assert KernelSpec("linear")([1.0, 0.0], [0.0, 1.0])[0, 0] == 0.0
    with pytest.raises(ValueError):
        KernelSpec("rbf", -1.0)
    with pytest.raises(ValueError):
        KernelSpec("poly")


def test_gram_matches_kernel():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 3))
    k = KernelSpec.rbf_from_data(X)
    np.testing.assert_allclose(gram_matrix(X, k), k(X, X), atol=1e-14)
    G = gram_matrix(X, KernelSpec("linear"))
    assert np.array_equal(G, G.T)


def test_objective_at_zero_is_log2():
    _, prob = random_problem(np.random.default_rng(1))
    assert abs(objective(np.zeros(prob.n), prob) - math.log(2)) < 1e-15


def test_objective_matches_straight_line():
    rng = np.random.default_rng(2)
    for _ in range(10):
        _, prob = random_problem(rng)
        a = rng.normal(size=prob.n)
        ref = straight_line_objective(a, prob.gram, prob.labels, prob.labeled_indices,
                                      prob.regularizer, prob.gamma_A, prob.gamma_I)
        assert abs(objective(a, prob) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_gradient_at_zero_single_label():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(4, 2))
    K = gram_matrix(X, KernelSpec.rbf_from_data(X))
    prob = SSLProblem(K, [1.0], [0], np.zeros((4, 4)), gamma_A=2.0)
    np.testing.assert_allclose(gradient(np.zeros(4), prob), -0.5 * K[0], atol=1e-15)


def test_gradient_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(10):
        _, prob = random_problem(rng, n=8, l=4, gA=rng.uniform(0, 1), gI=rng.uniform(0, 10))
        a = rng.normal(size=prob.n)
        g = gradient(a, prob)
        h = 1e-6
        for i in range(prob.n):
            e = np.zeros(prob.n)
            e[i] = h
            fd = (objective(a + e, prob) - objective(a - e, prob)) / (2 * h)
            assert abs(fd - g[i]) <= 1e-6 * max(1.0, abs(fd))


def test_problem_validation():
    K = np.eye(3)
    with pytest.raises(ValueError):
        SSLProblem(K, [1.0], [0], np.eye(2))
    with pytest.raises(ValueError):
        SSLProblem(K, [2.0], [0], np.eye(3))
    with pytest.raises(ValueError):
        SSLProblem(K, [1.0, -1.0], [0, 0], np.eye(3))
    with pytest.raises(ValueError):
        SSLProblem(K, [1.0], [0], np.eye(3), gamma_I=-1)


def test_two_point_linear_classifier():
    X = np.array([[1.0], [-1.0]])
    k = KernelSpec("linear")
    prob = SSLProblem(gram_matrix(X, k), [1.0, -1.0], [0, 1], np.zeros((2, 2)), gamma_A=1e-3)
    model = train(prob, X, k)
    assert predict(model, [1.0]) > 0 and predict(model, [-1.0]) < 0


def test_cg_monotone_and_stopping_rule():
    rng = np.random.default_rng(5)
    for _ in range(5):
        _, prob = random_problem(rng, n=10, l=5, gA=1e-3, gI=1.0)
        res = conjugate_gradient(prob, epsilon=1e-8)
        h = np.array(res.objective_history)
        assert res.converged
        assert np.all(np.diff(h) <= 0)
        assert abs(h[-1] - h[-2]) <= 1e-8
        assert np.all(np.abs(np.diff(h[:-1])) > 1e-8)
        assert h[-1] <= h[0]


def test_cg_reaches_optimum():
    rng = np.random.default_rng(6)
    _, prob = random_problem(rng, n=8, l=4, gA=0.05, gI=1.0)
    res = conjugate_gradient(prob, epsilon=1e-14)
    assert np.abs(gradient(res.alpha, prob)).max() < 1e-5


def test_strong_graph_propagates_labels():
    # two clusters of three, one labeled point each, clique regularizer per cluster
    X = np.array([[0.0], [0.1], [0.2], [5.0], [5.1], [5.2]])
    A = np.zeros((6, 6))
    A[:3, :3] = 1
    A[3:, 3:] = 1
    np.fill_diagonal(A, 0)
    L = np.diag(A.sum(1)) - A
    k = KernelSpec("rbf", 1.0)
    prob = SSLProblem(gram_matrix(X, k), [1.0, -1.0], [0, 3], L, 1e-4, 1e3)
    model = train(prob, X, k, epsilon=1e-12)
    s = predict(model, X)
    assert np.all(s[:3] > 0) and np.all(s[3:] < 0)
    # independent oracle: plain gradient descent on the same objective
    a = np.zeros(6)
    for _ in range(20000):
        a -= 0.05 * gradient(a, prob)
    assert np.array_equal(np.sign(prob.gram @ a), np.sign(s))


def test_predict_contracts():
    X = np.random.default_rng(7).normal(size=(5, 2))
    k = KernelSpec.rbf_from_data(X)
    assert np.all(predict(TrainedModel(np.zeros(5), k, X), X) == 0)
    e1 = np.eye(5)[0]
    x = np.array([0.3, -0.2])
    assert predict(TrainedModel(e1, k, X), x) == k(X[0], x)[0, 0]
    with pytest.raises(ValueError):
        predict(TrainedModel(e1, k, X), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        TrainedModel(np.array([np.nan] * 5), k, X)


def test_one_vs_rest_symmetry_two_classes():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(12, 2))
    X = np.vstack([X, -X])
    y = np.r_[np.zeros(12, int), np.ones(12, int)]
    k = KernelSpec.rbf_from_data(X)
    labeled = np.r_[0:3, 12:15]
    models = train_one_vs_rest(X, y[labeled], labeled, np.zeros((24, 24)), k, 1e-3, 0.0, epsilon=1e-14)
    _, S = score_matrix(models, X)
    np.testing.assert_allclose(S[:, 0], -S[:, 1], atol=1e-6)


def test_one_vs_rest_accuracy_on_blobs():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        centers = np.array([[0, 0], [4, 0], [2, 3.5]])
        y = np.repeat(np.arange(3), 20)
        X = centers[y] + 0.7 * rng.normal(size=(60, 2))
        labeled = np.sort(np.concatenate([rng.choice(np.flatnonzero(y == c), 6, replace=False) for c in range(3)]))
        models = train_one_vs_rest(X, y[labeled], labeled, np.zeros((60, 60)), KernelSpec.rbf_from_data(X),
                                   1e-4, 0.0)
        classes, S = score_matrix(models, X)
        acc = np.mean(np.array(classes)[S.argmax(1)] == y)
        assert acc >= 0.9


def test_one_vs_rest_skips_unlabeled_class(caplog):
    X = np.random.default_rng(9).normal(size=(9, 2))
    k = KernelSpec.rbf_from_data(X)
    models = train_one_vs_rest(X, [0, 1, 0], [0, 1, 2], np.zeros((9, 9)), k, 1e-3, 0.0, classes=[0, 1, 2])
    assert list(models) == [0, 1]
    assert "no labeled examples" in caplog.text
    alone = train_one_vs_rest(X, [0, 1, 0], [0, 1, 2], np.zeros((9, 9)), k, 1e-3, 0.0)
    np.testing.assert_array_equal(models[0].alpha, alone[0].alpha)
    with pytest.raises(ValueError):
        train_one_vs_rest(X, [0, 0], [0, 1], np.zeros((9, 9)), k, 1e-3, 0.0)


def test_save_load_roundtrip(tmp_path):
    X = np.random.default_rng(10).normal(size=(6, 2))
    k = KernelSpec.rbf_from_data(X)
    models = train_one_vs_rest(X, [0, 1, 1], [0, 2, 4], np.zeros((6, 6)), k, 1e-3, 0.0,
                               hyperparams={"variant": "lapr"})
    save_models(models, tmp_path / "m.json")
    back = load_models(tmp_path / "m.json")
    assert list(back) == [0, 1]
    np.testing.assert_array_equal(score_matrix(models, X)[1], score_matrix(back, X)[1])
    assert back[0].hyperparams["variant"] == "lapr"


def test_permutation_invariance():
    rng = np.random.default_rng(11)
    X, base = random_problem(rng, n=9, l=4)
    # a narrow kernel and gamma_A = 1 keep the problem well conditioned, so
    # round-off differences between the two orderings are not amplified
    k = KernelSpec("rbf", 0.3)
    prob = SSLProblem(gram_matrix(X, k), base.labels, base.labeled_indices, base.regularizer, 1.0, 3.0)
    perm = rng.permutation(9)
    inv = np.argsort(perm)
    L2 = prob.regularizer[np.ix_(perm, perm)]
    prob2 = SSLProblem(gram_matrix(X[perm], k), prob.labels, inv[prob.labeled_indices], L2, 1.0, 3.0)
    a1 = conjugate_gradient(prob).alpha
    a2 = conjugate_gradient(prob2).alpha
    np.testing.assert_allclose(a2, a1[perm], rtol=0, atol=1e-10)
    grid = rng.normal(size=(5, 2))
    s1 = predict(TrainedModel(a1, k, X), grid)
    s2 = predict(TrainedModel(a2, k, X[perm]), grid)
    np.testing.assert_allclose(s1, s2, atol=1e-10)


def test_predict_on_training_points_matches_gram_rows():
    rng = np.random.default_rng(12)
    X, prob = random_problem(rng)
    model = train(prob, X, KernelSpec.rbf_from_data(X))
    np.testing.assert_allclose(predict(model, X), prob.gram @ model.alpha, atol=1e-12)
