import numpy as np
import pytest

from hplapr.evaluation import (
    GridSpec,
    Settings,
    SplitSpec,
    average_precision,
    cross_validate,
    evaluate_scores,
    make_synthetic,
    make_synthetic_with_test,
    mean_average_precision,
    run_benchmark,
    run_pipeline,
    PipelineError,
    split_labels,
)
from hplapr.graph import FeatureTable
from hplapr.variants import VARIANTS, build_regularizer


def test_average_precision_hand_cases():
    assert average_precision([3, 2, 1], [True, False, True]) == 5 / 6
    assert average_precision([2, 1], [False, True]) == 0.5
    assert average_precision([5, 4, 1, 0], [True, True, False, False]) == 1.0
    assert average_precision([1, 2], [False, False]) is None
    # ties keep input order
    assert average_precision([1, 1], [False, True]) == 0.5


def test_average_precision_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = rng.integers(2, 12)
        s = rng.normal(size=n)
        pos = rng.random(n) < 0.4
        if not pos.any():
            continue
        order = sorted(range(n), key=lambda i: -s[i])
        hits, precs = 0, []
        for r, i in enumerate(order, start=1):
            if pos[i]:
                hits += 1
                precs.append(hits / r)
        assert abs(average_precision(s, pos) - sum(precs) / len(precs)) < 1e-15


def test_map_is_mean():
    assert mean_average_precision({0: 0.5, 1: 1.0, 2: None}) == 0.75
    with pytest.raises(ValueError):
        mean_average_precision({0: None})
    ap, m = evaluate_scores([0, 1], np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]]), [0, 1, 1])
    assert ap == {0: 1.0, 1: 1.0} and m == 1.0


def test_synthetic_generator():
    t = make_synthetic(classes=6, groups=3, noise=0.0, points_per_class=4)
    assert len(np.unique(t.features, axis=0)) == 6
    for c in range(6):
        assert np.ptp(t.features[t.class_labels == c], axis=0).max() == 0
        assert len(set(t.group_labels[t.class_labels == c])) == 1
    a, b = make_synthetic(seed=3), make_synthetic(seed=3)
    assert np.array_equal(a.features, b.features)
    train, test = make_synthetic_with_test(seed=3, test_points_per_class=7)
    assert np.array_equal(train.features, a.features) and test.n == 28
    with pytest.raises(ValueError):
        make_synthetic(classes=5, groups=2)


def test_synthetic_one_nn_sanity():
    t = make_synthetic(classes=4, points_per_class=50, noise=0.3, seed=1)
    D = np.linalg.norm(t.features[:, None] - t.features[None], axis=2)
    np.fill_diagonal(D, np.inf)
    acc = np.mean(t.class_labels[D.argmin(1)] == t.class_labels)
    assert acc >= 0.95


def test_split_labels():
    t = make_synthetic(points_per_class=50)
    (lab, unl), = split_labels(t, SplitSpec(0.1, 1, 1))
    assert all(np.sum(t.class_labels[lab] == c) == 5 for c in range(4))
    assert len(np.intersect1d(lab, unl)) == 0 and len(lab) + len(unl) == t.n
    (lab1, unl1), = split_labels(t, SplitSpec(1.0, 1, 1))
    assert unl1.size == 0
    s1 = split_labels(t, SplitSpec(0.1, 7, 2))
    s2 = split_labels(t, SplitSpec(0.1, 7, 2))
    assert all(np.array_equal(x[0], y[0]) for x, y in zip(s1, s2))
    other = split_labels(t, SplitSpec(0.1, 8, 1))[0][0]
    assert not np.array_equal(other, s1[0][0])
    small = make_synthetic(points_per_class=3)
    with pytest.raises(ValueError, match="no labeled rows"):
        split_labels(small, SplitSpec(0.1, 1, 1))


def test_regularizers_are_symmetric_psd():
    t = make_synthetic(points_per_class=8, seed=2)
    for v in VARIANTS:
        reg = build_regularizer(t, v, 3, 2.4, group_constrained=True)
        M = reg.matrix
        assert M.shape == (t.n, t.n)
        assert np.abs(M - M.T).max() <= 1e-12
        assert np.linalg.eigvalsh(M).min() >= -1e-8 * max(1.0, np.abs(M).max())
        assert (reg.eigensystem is not None) == (v in ("plapr", "hplapr"))
    with pytest.raises(ValueError):
        build_regularizer(t, "nope", 3)


def test_cross_validate_single_point_and_ties():
    t = make_synthetic(points_per_class=10, seed=4)
    splits = split_labels(t, SplitSpec(0.2, 100, 2))
    one = GridSpec([2.0], [1e-3], [1.0], [4])
    hp, report, rows = cross_validate(t, splits, one, "hlapr")
    assert hp == {"k": 4, "p": 2.0, "gamma_A": 1e-3, "gamma_I": 1.0}
    assert len(rows) == 1 and report.variant == "hlapr"
    # with a tiny gamma_I the regularizer is irrelevant, so scores tie; smaller gamma_I wins
    tie = GridSpec([2.0], [1e-3], [1e-12, 1e-11], [4])
    hp, _, rows = cross_validate(t, splits, tie, "lapr")
    assert rows[0]["map"] == rows[1]["map"] and hp["gamma_I"] == 1e-12


def test_cross_validate_records_failures():
    t = make_synthetic(points_per_class=10, seed=4)
    splits = split_labels(t, SplitSpec(0.2, 100, 1))
    grid = GridSpec([2.0], [1e-3], [1.0], [4, 500])
    hp, _, rows = cross_validate(t, splits, grid, "lapr")
    assert [r["status"] for r in rows] == ["ok", "failed"] and hp["k"] == 4


def test_supervised_collapse_across_variants():
    t = make_synthetic(points_per_class=10, seed=5)
    (lab, unl), = split_labels(t, SplitSpec(0.2, 3, 1))
    maps = []
    for v in ("lapr", "hplapr"):
        cfg = {"dataset": {"synthetic": {"points_per_class": 10, "seed": 5}}, "variant": v,
               "seed": 3, "labeled_fraction": 0.2,
               "hyperparams": {"k": 4, "p": 2.5, "gamma_A": 1e-3, "gamma_I": 0.0}}
        maps.append(run_pipeline(cfg)["map"])
    assert abs(maps[0] - maps[1]) <= 1e-8


def test_pipeline_outputs(tmp_path):
    cfg = {"dataset": {"synthetic": {"points_per_class": 12, "seed": 0}, "test_points_per_class": 5},
           "variant": "hplapr", "hyperparams": {"k": 4, "p": 2.3, "gamma_A": 1e-4, "gamma_I": 10.0}}
    res = run_pipeline(cfg, tmp_path / "a")
    run_pipeline(cfg, tmp_path / "b")
    assert 0 <= res["map"] <= 1 and res["inductive_map"] is not None
    for name in ("metrics.json", "ap_by_class.csv", "convergence.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    with pytest.raises(PipelineError) as err:
        run_pipeline({**cfg, "hyperparams": {"k": 1000}})
    assert err.value.stage == "regularizer"


def test_benchmark_small(tmp_path):
    cfg = {"dataset": {"synthetic": {"points_per_class": 10, "seed": 1}},
           "variants": ["lapr", "hplapr"], "fractions": [0.2], "seeds": [1, 2],
           "grid": {"k": [4], "p": [1.8, 2.0, 2.2], "gamma_A": [1e-3], "gamma_I": [0.1, 10.0]}}
    res = run_benchmark(cfg, tmp_path)
    assert set(res.map_table[0.2]) == {"lapr", "hplapr", "supervised"}
    for name in ("map_by_fraction.csv", "map_by_seed.csv", "ap_by_class.csv", "p_sweep.csv",
                 "grid_search.csv", "run_manifest.json"):
        assert (tmp_path / name).is_file()
    lines = (tmp_path / "map_by_fraction.csv").read_text().splitlines()
    assert lines[0] == "fraction,LapR,HpLapR,Supervised" and len(lines) == 2
    sweep = (tmp_path / "p_sweep.csv").read_text().splitlines()[1:]
    assert len(sweep) == 3 and sum(line.split(",")[3] == "True" for line in sweep) == 1


def test_settings_defaults():
    s = Settings()
    assert s.plap.max_iters == 300 and not s.group_constrained
    with pytest.raises(ValueError):
        GridSpec(p_grid=[])
    with pytest.raises(ValueError):
        SplitSpec(labeled_fraction=0.0)
    assert isinstance(make_synthetic(), FeatureTable)
