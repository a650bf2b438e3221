"""Command-line interface: ``hplapr <subcommand> [flags]``.

Parameters resolve as command-line flag > JSON config (``--config``) >
built-in default.  Every subcommand writes only inside ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import PipelineError, run_benchmark, run_pipeline
from .graph import (
    GraphError,
    WeightedGraph,
    build_knn_graph,
    build_knn_hypergraph,
    hypergraph_adjacency,
    hypergraph_laplacian,
    normalized_laplacian,
    unnormalized_laplacian,
)
from .io import read_feature_csv, read_json, read_matrix_csv, write_matrix_csv
from .model import KernelSpec, gram_matrix, load_models, save_models, score_matrix, train_one_vs_rest
from .plap import PLapConfig, approximate_p_laplacian
from .variants import DISPLAY, VARIANTS, build_regularizer

log = logging.getLogger("hplapr")

DEFAULTS = {
    "seed": 1,
    "out": "hplapr-out",
    "variant": "hplapr",
    "p": 2.0,
    "k": 5,
    "gamma_a": 1e-6,
    "gamma_i": 1e-2,
    "embedding_dim": None,
    "max_iters": 2000,
    "rel_tol": 1e-6,
    "epsilon": 1e-8,
    "train_max_iters": 5000,
    "hypergraph": False,
    "unit_weights": False,
    "group_constrained": False,
}


class UsageError(Exception):
    pass


def _h(text, key):
    return f"{text} (default: {DEFAULTS[key]})"


def _common(sp, *keys):
    sp.add_argument("--config", help="JSON config file; flags override its values")
    sp.add_argument("--seed", type=int, help=_h("seed for every random choice", "seed"))
    sp.add_argument("--out", help=_h("output directory", "out"))
    flags = {
        "variant": lambda: sp.add_argument("--variant", choices=VARIANTS, help=_h("regularizer variant", "variant")),
        "p": lambda: sp.add_argument("--p", type=float, help=_h("p-Laplacian exponent in [1, 3]", "p")),
        "k": lambda: sp.add_argument("--k", type=int, help=_h("nearest neighbours per vertex", "k")),
        "gamma_a": lambda: sp.add_argument("--gamma-a", dest="gamma_a", type=float,
                                           help=_h("ambient (RKHS) weight", "gamma_a")),
        "gamma_i": lambda: sp.add_argument("--gamma-i", dest="gamma_i", type=float,
                                           help=_h("intrinsic (graph) weight", "gamma_i")),
        "embedding_dim": lambda: sp.add_argument(
            "--embedding-dim", dest="embedding_dim", type=int,
            help="eigenvectors kept by the p-Laplacian approximation (default: N up to 500 vertices, else 64)"),
    }
    for key in keys:
        flags[key]()


def _graph_flags(sp):
    sp.add_argument("--hypergraph", action="store_true", default=None,
                    help=_h("build the kNN hypergraph instead of the kNN graph", "hypergraph"))
    sp.add_argument("--unit-weights", dest="unit_weights", action="store_true", default=None,
                    help=_h("unit instead of heat-kernel weights", "unit_weights"))
    sp.add_argument("--group-constrained", dest="group_constrained", action="store_true", default=None,
                    help=_h("hyperedges only within the group column", "group_constrained"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hplapr", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"hplapr {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("build-graph", help="write kNN graph or hypergraph matrices")
    sp.add_argument("--features", help="feature CSV (id,label,group,f0,...)")
    _common(sp, "k")
    _graph_flags(sp)

    sp = sub.add_parser("eigs", help="approximate p-Laplacian eigenpairs")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--features", help="feature CSV; the graph is built from it")
    src.add_argument("--graph", help="dense weight-matrix CSV (symmetric, zero diagonal)")
    _common(sp, "p", "k", "embedding_dim")
    _graph_flags(sp)
    sp.add_argument("--max-iters", dest="max_iters", type=int, help=_h("descent iteration cap", "max_iters"))
    sp.add_argument("--rel-tol", dest="rel_tol", type=float, help=_h("relative objective change to stop", "rel_tol"))

    sp = sub.add_parser("train", help="train one-vs-rest models; rows with an empty label are unlabeled")
    sp.add_argument("--features", help="feature CSV")
    _common(sp, "variant", "p", "k", "gamma_a", "gamma_i", "embedding_dim")
    sp.add_argument("--group-constrained", dest="group_constrained", action="store_true", default=None,
                    help=_h("hyperedges only within the group column", "group_constrained"))
    sp.add_argument("--epsilon", type=float, help=_h("CG stop when |f change| <= epsilon", "epsilon"))

    sp = sub.add_parser("predict", help="score a feature CSV with a saved model")
    sp.add_argument("--model", help="model JSON written by `train`")
    sp.add_argument("--features", help="feature CSV to score")
    _common(sp)

    sp = sub.add_parser("evaluate", help="run one construct/approximate/train/evaluate pipeline")
    _common(sp, "variant", "p", "k", "gamma_a", "gamma_i", "embedding_dim")

    sp = sub.add_parser("benchmark", help="compare variants over fractions and seeds")
    _common(sp, "variant", "p", "k", "gamma_a", "gamma_i", "embedding_dim")
    return ap


def _resolve(args, flat: bool = True) -> dict:
    cfg = read_json(args.config) if getattr(args, "config", None) else {}
    if flat:
        merged = dict(DEFAULTS)
        merged.update({k: v for k, v in cfg.items()})
    else:
        merged = cfg
    for key, val in vars(args).items():
        if key in ("command", "config", "verbose") or val is None:
            continue
        merged[key] = val
    return merged


def _validate(opts: dict):
    if "p" in opts and opts["p"] is not None and not 1.0 <= float(opts["p"]) <= 3.0:
        raise UsageError(f"--p must lie in [1, 3], got {opts['p']}")
    if "k" in opts and opts["k"] is not None and int(opts["k"]) < 1:
        raise UsageError(f"--k must be >= 1, got {opts['k']}")
    for key in ("gamma_a", "gamma_i"):
        if key in opts and opts[key] is not None and float(opts[key]) < 0:
            raise UsageError(f"--{key.replace('_', '-')} must be nonnegative")
    if opts.get("embedding_dim") is not None and int(opts["embedding_dim"]) < 1:
        raise UsageError("--embedding-dim must be >= 1")
    if "variant" in opts and opts["variant"] is not None and str(opts["variant"]).lower() not in VARIANTS:
        raise UsageError(f"unknown variant {opts['variant']!r}")


def _need(opts, key, flag):
    if not opts.get(key):
        raise UsageError(f"{flag} is required")
    return opts[key]


def _outdir(opts) -> Path:
    out = Path(opts.get("out") or DEFAULTS["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_table(path):
    return read_feature_csv(path)


def _build_structure(table, opts):
    policy = "unit" if opts["unit_weights"] else "gaussian"
    k = int(opts["k"])
    if opts["hypergraph"]:
        if opts["group_constrained"] and table.group_labels is None:
            raise UsageError("--group-constrained needs a filled group column")
        return build_knn_hypergraph(table, k, policy, group_constrained=bool(opts["group_constrained"]))
    return build_knn_graph(table, k, policy)


def cmd_build_graph(args) -> int:
    opts = _resolve(args)
    _validate(opts)
    table = _load_table(_need(opts, "features", "--features"))
    s = _build_structure(table, opts)
    out = _outdir(opts)
    if opts["hypergraph"]:
        write_matrix_csv(s.incidence, out / "incidence.csv")
        write_matrix_csv(s.edge_weights[None, :], out / "edge_weights.csv")
        write_matrix_csv(hypergraph_adjacency(s).weights, out / "adjacency.csv")
        write_matrix_csv(hypergraph_laplacian(s).matrix, out / "laplacian.csv")
    else:
        write_matrix_csv(s.weights, out / "weights.csv")
        write_matrix_csv(normalized_laplacian(s).matrix, out / "laplacian.csv")
        write_matrix_csv(unnormalized_laplacian(s).matrix, out / "unnormalized_laplacian.csv")
    print(f"wrote {'hypergraph' if opts['hypergraph'] else 'graph'} over {table.n} vertices to {out}")
    return 0


def cmd_eigs(args) -> int:
    opts = _resolve(args)
    _validate(opts)
    if opts.get("graph"):
        graph = WeightedGraph(read_matrix_csv(opts["graph"]))
        init = normalized_laplacian(graph)
    else:
        table = _load_table(_need(opts, "features", "--features or --graph"))
        s = _build_structure(table, opts)
        if opts["hypergraph"]:
            graph, init = hypergraph_adjacency(s), hypergraph_laplacian(s)
        else:
            graph, init = s, normalized_laplacian(s)
    cfg = PLapConfig(float(opts["p"]), opts.get("embedding_dim"), int(opts["max_iters"]), float(opts["rel_tol"]))
    eig, _ = approximate_p_laplacian(graph, init, cfg)
    out = _outdir(opts)
    write_matrix_csv(eig.values[:, None], out / "eigenvalues.csv")
    write_matrix_csv(eig.vectors, out / "eigenvectors.csv")
    (out / "convergence.json").write_text(json.dumps(eig.report(), indent=2) + "\n")
    print(f"{eig.values.size} eigenpairs, converged={eig.converged}, iterations={eig.iterations}")
    return 0


def cmd_train(args) -> int:
    opts = _resolve(args)
    _validate(opts)
    table = _load_table(_need(opts, "features", "--features"))
    if table.class_labels is None:
        raise UsageError("training needs a label column with at least two labeled classes")
    labeled = np.flatnonzero(table.class_labels >= 0)
    plap = PLapConfig(K=opts.get("embedding_dim"), max_iters=int(opts["max_iters"]), rel_tol=float(opts["rel_tol"]))
    reg = build_regularizer(table, opts["variant"], int(opts["k"]), float(opts["p"]),
                            group_constrained=bool(opts["group_constrained"]), plap=plap)
    kernel = KernelSpec.rbf_from_data(table)
    hp = {"variant": opts["variant"], "p": float(opts["p"]), "k": int(opts["k"]),
          "K": reg.eigensystem.vectors.shape[1] if reg.eigensystem is not None else None}
    models = train_one_vs_rest(table.features, table.class_labels[labeled], labeled, reg.matrix, kernel,
                               float(opts["gamma_a"]), float(opts["gamma_i"]),
                               gram=gram_matrix(table, kernel), epsilon=float(opts["epsilon"]),
                               max_iters=int(opts["train_max_iters"]), hyperparams=hp)
    out = _outdir(opts)
    save_models(models, out / "model.json")
    if reg.eigensystem is not None:
        (out / "convergence.json").write_text(json.dumps(reg.eigensystem.report(), indent=2) + "\n")
    print(f"trained {len(models)} {DISPLAY[opts['variant']]} models on {labeled.size} labeled / {table.n} rows")
    return 0


def cmd_predict(args) -> int:
    opts = _resolve(args)
    models = load_models(_need(opts, "model", "--model"))
    table = _load_table(_need(opts, "features", "--features"))
    classes, scores = score_matrix(models, table.features)
    out = _outdir(opts)
    with open(out / "scores.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(["id"] + [f"score_{c}" for c in classes] + ["predicted"]) + "\n")
        for i, row in enumerate(scores):
            pred = classes[int(np.argmax(row))]
            fh.write(",".join([table.ids[i]] + [repr(float(v)) for v in row] + [str(pred)]) + "\n")
    print(f"scored {table.n} rows into {out / 'scores.csv'}")
    return 0


def _apply_overrides(cfg: dict, args, benchmark: bool) -> dict:
    cfg = json.loads(json.dumps(cfg))
    if args.out is not None:
        cfg["out"] = args.out
    cfg.setdefault("out", DEFAULTS["out"])
    if args.embedding_dim is not None:
        cfg.setdefault("plap", {})["K"] = args.embedding_dim
    if not benchmark:
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.variant is not None:
            cfg["variant"] = args.variant
        hp = cfg.setdefault("hyperparams", {})
        for flag, key in (("p", "p"), ("k", "k"), ("gamma_a", "gamma_A"), ("gamma_i", "gamma_I")):
            if getattr(args, flag) is not None:
                hp[key] = getattr(args, flag)
        return cfg
    if args.seed is not None:
        n = len(cfg.get("seeds", [1, 2, 3, 4, 5]))
        cfg["seeds"] = [args.seed + i for i in range(n)]
        cfg.setdefault("validation", {})["seed"] = args.seed + 1000
        syn = cfg.get("dataset", {}).get("synthetic")
        if syn is not None:
            syn["seed"] = args.seed
    if args.variant is not None:
        cfg["variants"] = [args.variant]
    grid = cfg.setdefault("grid", {})
    for flag, key in (("p", "p"), ("k", "k"), ("gamma_a", "gamma_A"), ("gamma_i", "gamma_I")):
        if getattr(args, flag) is not None:
            grid[key] = [getattr(args, flag)]
    return cfg


def _nested_config(args) -> tuple[dict, Path | None]:
    if not args.config:
        raise UsageError("--config is required")
    _validate({k: getattr(args, k, None) for k in ("p", "k", "gamma_a", "gamma_i", "embedding_dim", "variant")})
    return read_json(args.config), Path(args.config).resolve().parent


def cmd_evaluate(args) -> int:
    cfg, base = _nested_config(args)
    cfg = _apply_overrides(cfg, args, benchmark=False)
    res = run_pipeline(cfg, base_dir=base)
    print(f"{res['variant']}: mAP={res['map']:.4f} -> {cfg['out']}")
    return 0


def cmd_benchmark(args) -> int:
    cfg, base = _nested_config(args)
    cfg = _apply_overrides(cfg, args, benchmark=True)
    res = run_benchmark(cfg, base_dir=base)
    for frac, row in res.map_table.items():
        print(f"fraction {frac}: " + ", ".join(f"{DISPLAY[v]}={m:.4f}" for v, m in row.items()))
    return 0


COMMANDS = {
    "build-graph": cmd_build_graph,
    "eigs": cmd_eigs,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except PipelineError as exc:
        print(f"hplapr {args.command}: stage {exc}", file=sys.stderr)
    except (UsageError, GraphError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"hplapr {args.command}: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
