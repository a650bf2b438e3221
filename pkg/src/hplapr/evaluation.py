"""Datasets, label splits, AP/mAP and the variant comparison protocol."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import platform
from fractions import Fraction
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import scipy

from .graph import FeatureTable
from .model import KernelSpec, gram_matrix, score_matrix, train_one_vs_rest
from .plap import PLapConfig
from .variants import DISPLAY, P_VARIANTS, build_regularizer, check_variant

logger = logging.getLogger(__name__)

PAPER_FRACTIONS = (0.10, 0.20, 0.30, 0.50)
DEFAULT_SEEDS = (1, 2, 3, 4, 5)


@dataclass
class SplitSpec:
    labeled_fraction: float = 0.10
    seed: int = 1
    repeats: int = 5

    def __post_init__(self):
        if not 0 < self.labeled_fraction <= 1:
            raise ValueError(f"labeled fraction must lie in (0, 1], got {self.labeled_fraction}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass
class GridSpec:
    p_grid: list = field(default_factory=lambda: [round(1.0 + 0.1 * i, 1) for i in range(21)])
    gamma_A_grid: list = field(default_factory=lambda: [10.0**i for i in range(-10, 11)])
    gamma_I_grid: list = field(default_factory=lambda: [10.0**i for i in range(-10, 11)])
    k_grid: list = field(default_factory=lambda: list(range(5, 16)))

    def __post_init__(self):
        for name in ("p_grid", "gamma_A_grid", "gamma_I_grid", "k_grid"):
            if not list(getattr(self, name)):
                raise ValueError(f"{name} is empty")
        if min(self.p_grid) < 1 or min(self.k_grid) < 1:
            raise ValueError("grid needs p >= 1 and k >= 1")
        if min(self.gamma_A_grid) < 0 or min(self.gamma_I_grid) < 0:
            raise ValueError("gamma grids must be nonnegative")


@dataclass
class MetricReport:
    variant: str
    per_class_ap: dict
    map: float
    split: dict = field(default_factory=dict)
    hyperparams: dict = field(default_factory=dict)


# ---------------------------------------------------------------- data


def make_synthetic(classes: int = 4, groups: int = 2, points_per_class: int = 50, noise: float = 1.0,
                   seed: int = 0, dim: int = 2, group_spread: float = 10.0,
                   class_spread: float = 2.0) -> FeatureTable:
    """Gaussian blob per class with classes nested in groups.

    Group centers sit on a circle of radius ``group_spread``; the classes of a
    group sit on a circle of radius ``class_spread`` around their group center
    (random rotations, first two coordinates).  Classes sharing a group are
    therefore closer to each other than to classes of other groups.
    """
    return make_synthetic_with_test(classes, groups, points_per_class, noise, seed, dim,
                                    group_spread, class_spread)[0]


def make_synthetic_with_test(classes: int = 4, groups: int = 2, points_per_class: int = 50,
                             noise: float = 1.0, seed: int = 0, dim: int = 2,
                             group_spread: float = 10.0, class_spread: float = 2.0,
                             test_points_per_class: int = 0):
    """:func:`make_synthetic` plus an independent test draw from the same blobs.

    The training table does not depend on ``test_points_per_class``.
    """
    if classes < 2 or groups < 1 or classes % groups:
        raise ValueError("need classes >= 2 and classes divisible into groups")
    if points_per_class < 1 or noise < 0:
        raise ValueError("points_per_class must be positive and noise nonnegative")
    if dim < 2:
        raise ValueError("dim must be at least 2")
    rng = np.random.default_rng(seed)
    per_group = classes // groups

    def ring(m, radius):
        angle = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(m) / m
        pts = np.zeros((m, dim))
        pts[:, 0], pts[:, 1] = radius * np.cos(angle), radius * np.sin(angle)
        return pts if m > 1 else np.zeros((1, dim))

    group_centers = ring(groups, group_spread)
    cls_group = np.repeat(np.arange(groups), per_group)
    centers = np.vstack([group_centers[g] + ring(per_group, class_spread) for g in range(groups)])

    def draw(m, prefix):
        y = np.repeat(np.arange(classes), m)
        X = centers[y] + noise * rng.normal(size=(y.size, dim))
        return FeatureTable(X, y, cls_group[y], [f"{prefix}{i}" for i in range(y.size)])

    train = draw(points_per_class, "")
    test = draw(test_points_per_class, "t") if test_points_per_class else None
    return train, test


def split_labels(table: FeatureTable, spec: SplitSpec) -> list:
    """Stratified labeled/unlabeled partitions, ``spec.repeats`` of them.

    Each class contributes ``round(fraction * class_size)`` labeled rows.
    """
    if table.class_labels is None:
        raise ValueError("splitting needs class labels")
    y = table.class_labels
    rng = np.random.default_rng(spec.seed)
    classes = np.unique(y)
    counts = {}
    for c in classes:
        n_c = int(np.sum(y == c))
        m = int(round(spec.labeled_fraction * n_c))
        if m < 1:
            raise ValueError(f"labeled fraction {spec.labeled_fraction} leaves class {c!r} with no labeled rows")
        counts[c] = min(m, n_c)
    out = []
    for _ in range(spec.repeats):
        labeled = []
        for c in classes:
            idx = np.flatnonzero(y == c)
            labeled.append(rng.permutation(idx)[: counts[c]])
        labeled = np.sort(np.concatenate(labeled))
        unlabeled = np.setdiff1d(np.arange(table.n), labeled)
        out.append((labeled, unlabeled))
    return out


# ---------------------------------------------------------------- metrics


def average_precision(scores, positives) -> float | None:
    """Mean of precision@r over the ranks r of the positives.

    Ranking is by descending score, ties by ascending position.  Returns
    ``None`` when there is no positive.
    """
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape:
        raise ValueError("scores and positives must have the same length")
    n_pos = int(positives.sum())
    if n_pos == 0:
        return None
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = positives[order]
    ranks = np.flatnonzero(hits) + 1
    # exact rational sum, so hand-computed values compare with ==
    return float(sum(Fraction(h, int(r)) for h, r in enumerate(ranks, start=1)) / n_pos)


def mean_average_precision(per_class_ap: dict) -> float:
    vals = [v for v in per_class_ap.values() if v is not None]
    if not vals:
        raise ValueError("no class has a defined AP")
    return float(sum(Fraction(v) for v in vals) / len(vals))


def evaluate_scores(classes, scores, true_labels) -> tuple[dict, float]:
    true_labels = np.asarray(true_labels)
    ap = {c: average_precision(scores[:, j], true_labels == c) for j, c in enumerate(classes)}
    return ap, mean_average_precision(ap)


# ---------------------------------------------------------------- protocol


@dataclass
class Settings:
    """Everything besides the searched hyperparameters."""

    weight_policy: str = "gaussian"
    group_constrained: bool = False
    plap: PLapConfig = field(default_factory=lambda: PLapConfig(max_iters=300))
    epsilon: float = 1e-8
    train_max_iters: int = 5000


class RegularizerCache:
    """Regularizers depend on the unlabeled pool only, so they are shared
    across splits, gammas and (for ``p``-free variants) p values."""

    def __init__(self, table: FeatureTable, settings: Settings):
        self.table = table
        self.settings = settings
        self._store = {}

    def get(self, variant: str, k: int, p: float):
        key = (variant, k, p if variant in P_VARIANTS else None)
        if key not in self._store:
            s = self.settings
            self._store[key] = build_regularizer(
                self.table, variant, k, p, weight_policy=s.weight_policy,
                group_constrained=s.group_constrained, plap=s.plap)
        return self._store[key]


def fit_and_score(table, labeled, regularizer, kernel, gram, gamma_A, gamma_I, settings,
                  eval_rows, test_table=None):
    """Train one-vs-rest on ``labeled`` and score the rows ``eval_rows``."""
    y = table.class_labels
    classes = list(np.unique(y))
    models = train_one_vs_rest(table.features, y[labeled], labeled, regularizer, kernel,
                               gamma_A, gamma_I, classes=classes, gram=gram,
                               epsilon=settings.epsilon, max_iters=settings.train_max_iters)
    present = list(models)
    scores = gram[np.asarray(eval_rows)] @ np.column_stack([models[c].alpha for c in present])
    ap, m = evaluate_scores(present, scores, y[eval_rows])
    out = {"transductive": (ap, m), "models": models}
    if test_table is not None:
        _, test_scores = score_matrix(models, test_table.features)
        out["inductive"] = evaluate_scores(present, test_scores, test_table.class_labels)
    return out


def _tie_key(row):
    return (-row["map"], row["gamma_I"], row["p"], row["k"], row["gamma_A"])


def cross_validate(table: FeatureTable, splits, grid: GridSpec, variant: str,
                   settings: Settings | None = None, kernel: KernelSpec | None = None,
                   cache: RegularizerCache | None = None, gram=None):
    """Pick the grid point with the best mean held-out mAP over ``splits``.

    Returns ``(best_hyperparams, MetricReport, grid_rows)``.  Ties go to the
    smaller gamma_I, then smaller p, then smaller k.  A grid point whose
    training raises is recorded as failed.
    """
    settings = settings or Settings()
    supervised = variant == "supervised"
    variant = "lapr" if supervised else check_variant(variant)
    kernel = kernel or KernelSpec.rbf_from_data(table)
    gram = gram_matrix(table, kernel) if gram is None else gram
    cache = cache or RegularizerCache(table, settings)
    gi_grid = [0.0] if supervised else grid.gamma_I_grid
    rows = []
    for k, p in itertools.product(grid.k_grid, grid.p_grid if variant in P_VARIANTS else [2.0]):
        try:
            reg = None if supervised else cache.get(variant, int(k), float(p))
        except Exception as exc:  # a bad (k, p) must not sink the search
            logger.warning("regularizer (k=%s, p=%s) failed: %s", k, p, exc)
            reg = exc
        L = np.zeros_like(gram) if supervised else getattr(reg, "matrix", None)
        for ga, gi in itertools.product(grid.gamma_A_grid, gi_grid):
            row = {"k": int(k), "p": float(p), "gamma_A": float(ga), "gamma_I": float(gi)}
            try:
                if L is None:
                    raise reg
                maps, per_class = [], []
                for labeled, unlabeled in splits:
                    res = fit_and_score(table, labeled, L, kernel, gram, ga, gi, settings, unlabeled)
                    per_class.append(res["transductive"][0])
                    maps.append(res["transductive"][1])
                row.update(map=float(np.mean(maps)), status="ok", per_class=_mean_ap(per_class))
            except Exception as exc:
                logger.warning("grid point %s failed: %s", row, exc)
                row.update(map=float("nan"), status="failed", per_class={})
            rows.append(row)
    ok = [r for r in rows if r["status"] == "ok"]
    if not ok:
        raise RuntimeError(f"every grid point failed for variant {variant}")
    best = min(ok, key=_tie_key)
    hp = {key: best[key] for key in ("k", "p", "gamma_A", "gamma_I")}
    name = "supervised" if supervised else variant
    report = MetricReport(name, best["per_class"], best["map"], {"n_splits": len(splits)}, hp)
    for r in rows:
        r["variant"] = name
    return hp, report, rows


def _mean_ap(per_class_list):
    out = {}
    for c in per_class_list[0]:
        vals = [d[c] for d in per_class_list if d.get(c) is not None]
        out[c] = float(np.mean(vals)) if vals else None
    return out


# ---------------------------------------------------------------- config


def _resolve_dataset(block: dict, base_dir: Path | None = None):
    from .io import read_feature_csv

    if "synthetic" in block:
        syn = dict(block["synthetic"])
        syn.setdefault("test_points_per_class", block.get("test_points_per_class", 0))
        return make_synthetic_with_test(**syn)
    if "csv" in block:
        def path(p):
            p = Path(p)
            return p if p.is_absolute() or base_dir is None else base_dir / p

        train = read_feature_csv(path(block["csv"]))
        test = read_feature_csv(path(block["test_csv"])) if block.get("test_csv") else None
        return train, test
    raise ValueError("dataset block needs 'synthetic' or 'csv'")


def settings_from_config(cfg: dict) -> Settings:
    graph = cfg.get("graph", {})
    plap = cfg.get("plap", {})
    train = cfg.get("train", {})
    return Settings(
        weight_policy=graph.get("weight_policy", "gaussian"),
        group_constrained=bool(graph.get("group_constrained", False)),
        plap=PLapConfig(
            K=plap.get("K"),
            max_iters=int(plap.get("max_iters", 300)),
            rel_tol=float(plap.get("rel_tol", 1e-6)),
            step_scale=float(plap.get("step_scale", 0.01)),
        ),
        epsilon=float(train.get("epsilon", 1e-8)),
        train_max_iters=int(train.get("max_iters", 5000)),
    )


def grid_from_config(cfg: dict) -> GridSpec:
    g = cfg.get("grid", {})
    base = GridSpec()
    return GridSpec(
        p_grid=[float(v) for v in g.get("p", base.p_grid)],
        gamma_A_grid=[float(v) for v in g.get("gamma_A", g.get("gamma", base.gamma_A_grid))],
        gamma_I_grid=[float(v) for v in g.get("gamma_I", g.get("gamma", base.gamma_I_grid))],
        k_grid=[int(v) for v in g.get("k", base.k_grid)],
    )


def _kernel_for(table: FeatureTable, cfg: dict) -> KernelSpec:
    kc = cfg.get("kernel", {})
    kind = kc.get("kind", "rbf")
    if kind == "linear":
        return KernelSpec("linear")
    if kc.get("sigma") is not None:
        return KernelSpec("rbf", float(kc["sigma"]))
    return KernelSpec.rbf_from_data(table)


# ---------------------------------------------------------------- benchmark


@dataclass
class BenchmarkResult:
    reports: list
    map_table: dict  # fraction -> variant -> mean mAP
    per_seed: list  # dicts: variant, fraction, seed, map
    best: dict  # variant -> hyperparams
    p_sweep: list
    grid_rows: list


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def run_benchmark(cfg: dict, out_dir=None, base_dir: Path | None = None) -> BenchmarkResult:
    """Compare variants over labeled fractions and seeds; write CSV reports.

    Hyperparameters are chosen once per variant by :func:`cross_validate` on
    validation splits drawn with seeds disjoint from the evaluation seeds.
    """
    table, test = _resolve_dataset(cfg["dataset"], base_dir)
    variants = [check_variant(v) for v in cfg.get("variants", ["lapr", "plapr", "hlapr", "hplapr"])]
    if cfg.get("include_supervised", True):
        variants.append("supervised")
    fractions = [float(f) for f in cfg.get("fractions", PAPER_FRACTIONS)]
    seeds = [int(s) for s in cfg.get("seeds", DEFAULT_SEEDS)]
    val = cfg.get("validation", {})
    val_spec = SplitSpec(float(val.get("fraction", 0.10)), int(val.get("seed", 1000)), int(val.get("repeats", 1)))
    settings = settings_from_config(cfg)
    grid = grid_from_config(cfg)
    kernel = _kernel_for(table, cfg)
    gram = gram_matrix(table, kernel)
    cache = RegularizerCache(table, settings)

    val_splits = split_labels(table, val_spec)
    best, grid_rows = {}, []
    for v in variants:
        hp, _, rows = cross_validate(table, val_splits, grid, v, settings, kernel, cache, gram)
        best[v] = hp
        grid_rows.extend(rows)

    reports, per_seed, ap_rows = [], [], []
    map_table = {}
    for frac in fractions:
        map_table[frac] = {}
        for v in variants:
            hp = best[v]
            L = np.zeros_like(gram) if v == "supervised" else cache.get(v, hp["k"], hp["p"]).matrix
            maps = []
            for seed in seeds:
                labeled, unlabeled = split_labels(table, SplitSpec(frac, seed, 1))[0]
                res = fit_and_score(table, labeled, L, kernel, gram, hp["gamma_A"], hp["gamma_I"],
                                    settings, unlabeled, test)
                ap, m = res["transductive"]
                maps.append(m)
                split = {"labeled_fraction": frac, "seed": seed, "repeats": 1}
                reports.append(MetricReport(v, ap, m, split, dict(hp)))
                per_seed.append({"variant": v, "fraction": frac, "seed": seed, "map": m,
                                 "inductive_map": res["inductive"][1] if "inductive" in res else None})
                for c, a in sorted(ap.items()):
                    ap_rows.append([DISPLAY[v], frac, seed, "transductive", c, a])
                if "inductive" in res:
                    for c, a in sorted(res["inductive"][0].items()):
                        ap_rows.append([DISPLAY[v], frac, seed, "inductive", c, a])
            map_table[frac][v] = float(np.mean(maps))

    p_sweep = []
    for v in variants:
        if v not in P_VARIANTS:
            continue
        for p in sorted({r["p"] for r in grid_rows if r["variant"] == v}):
            vals = [r["map"] for r in grid_rows if r["variant"] == v and r["p"] == p and r["status"] == "ok"]
            p_sweep.append({"variant": v, "p": p, "map": max(vals) if vals else float("nan")})

    result = BenchmarkResult(reports, map_table, per_seed, best, p_sweep, grid_rows)
    out_dir = out_dir or cfg.get("out")
    if out_dir is not None:
        write_benchmark(result, Path(out_dir), cfg, variants, fractions, seeds)
    return result


def _p_sweep_rows(p_sweep):
    rows = []
    for v in sorted({r["variant"] for r in p_sweep}):
        curve = [r for r in p_sweep if r["variant"] == v]
        best = max(curve, key=lambda r: (r["map"], -r["p"]))
        interior = curve[0]["p"] < best["p"] < curve[-1]["p"]
        for r in curve:
            rows.append([DISPLAY[v], r["p"], r["map"], r["p"] == best["p"], interior])
    return rows


def write_benchmark(result: BenchmarkResult, out: Path, cfg: dict, variants, fractions, seeds):
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "map_by_fraction.csv", ["fraction"] + [DISPLAY[v] for v in variants],
               [[f] + [result.map_table[f][v] for v in variants] for f in fractions])
    _write_csv(out / "map_by_seed.csv", ["variant", "fraction", "seed", "map", "inductive_map"],
               [[DISPLAY[r["variant"]], r["fraction"], r["seed"], r["map"], r["inductive_map"]]
                for r in result.per_seed])
    rows = []
    for rep in result.reports:
        for c, a in sorted(rep.per_class_ap.items()):
            rows.append([DISPLAY[rep.variant], rep.split["labeled_fraction"], rep.split["seed"], c, a])
    _write_csv(out / "ap_by_class.csv", ["variant", "fraction", "seed", "class", "ap"], rows)
    _write_csv(out / "p_sweep.csv", ["variant", "p", "map", "is_best", "interior_optimum"],
               _p_sweep_rows(result.p_sweep))
    grid_sorted = sorted(result.grid_rows, key=lambda r: (variants.index(r["variant"]), r["k"], r["p"],
                                                         r["gamma_A"], r["gamma_I"]))
    _write_csv(out / "grid_search.csv", ["variant", "k", "p", "gamma_A", "gamma_I", "map", "status", "selected"],
               [[DISPLAY[r["variant"]], r["k"], r["p"], r["gamma_A"], r["gamma_I"], r["map"], r["status"],
                 all(result.best[r["variant"]][key] == r[key] for key in ("k", "p", "gamma_A", "gamma_I"))]
                for r in grid_sorted])
    from . import __version__

    manifest = {
        "config": cfg,
        "seeds": seeds,
        "selected_hyperparams": {DISPLAY[v]: result.best[v] for v in variants},
        "versions": {"hplapr": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------- single pipeline


def run_pipeline(cfg: dict, out_dir=None, base_dir: Path | None = None) -> dict:
    """Build one regularizer, train one-vs-rest on one split and evaluate it.

    Fixed hyperparameters come from ``cfg["hyperparams"]``.
    """
    stage = "dataset"
    try:
        table, test = _resolve_dataset(cfg["dataset"], base_dir)
        variant = check_variant(cfg.get("variant", "hplapr"))
        hp = {"k": 5, "p": 2.0, "gamma_A": 1e-6, "gamma_I": 1e-2}
        hp.update(cfg.get("hyperparams", {}))
        split = SplitSpec(float(cfg.get("labeled_fraction", 0.10)), int(cfg.get("seed", 1)), 1)
        settings = settings_from_config(cfg)
        stage = "split"
        labeled, unlabeled = split_labels(table, split)[0]
        stage = "regularizer"
        reg = build_regularizer(table, variant, int(hp["k"]), float(hp["p"]),
                                weight_policy=settings.weight_policy,
                                group_constrained=settings.group_constrained, plap=settings.plap)
        stage = "train"
        kernel = _kernel_for(table, cfg)
        gram = gram_matrix(table, kernel)
        res = fit_and_score(table, labeled, reg.matrix, kernel, gram, float(hp["gamma_A"]),
                            float(hp["gamma_I"]), settings, unlabeled, test)
    except Exception as exc:
        raise PipelineError(stage, exc) from exc
    ap, m = res["transductive"]
    report = MetricReport(variant, ap, m, asdict(split), hp)
    summary = {
        "variant": DISPLAY[variant],
        "map": m,
        "per_class_ap": {str(c): a for c, a in sorted(ap.items())},
        "inductive_map": res["inductive"][1] if "inductive" in res else None,
        "hyperparams": hp,
        "split": asdict(split),
        "training": {str(c): {"converged": bool(mod.converged)} for c, mod in res["models"].items()},
        "p_laplacian": reg.eigensystem.report() if reg.eigensystem is not None else None,
    }
    out_dir = out_dir or cfg.get("out")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        _write_csv(out / "ap_by_class.csv", ["variant", "class", "ap"],
                   [[DISPLAY[variant], c, a] for c, a in sorted(ap.items())])
        if reg.eigensystem is not None:
            (out / "convergence.json").write_text(json.dumps(reg.eigensystem.report(), indent=2) + "\n")
    summary["report"] = report
    return summary


class PipelineError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
