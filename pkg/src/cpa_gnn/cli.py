"""``cpa-gnn`` command line: data generation, statistics, checks and training.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import VARIANTS, __version__
from .graphs import Dataset, ParseError, degree_relabel, load_tu_dataset, uniform_features, write_tu_dataset
from .synthetic import (
    DEFAULT_COUNTS,
    DEFAULT_EDGES,
    DEFAULT_FRACTION,
    InfeasibleError,
    generate_triangle_node,
    realized_stats,
    triangle_node_dataset,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "CPA_GNN_SEED"

log = logging.getLogger("cpa_gnn")


class UsageError(Exception):
    pass


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(doc, out: str | None) -> None:
    text = _dump(doc)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# -- gen-data ------------------------------------------------------------------

def _feature_counts(nodes: int | None) -> tuple[int, int, int]:
    if nodes is None:
        return DEFAULT_COUNTS
    total = sum(DEFAULT_COUNTS)
    rare = [round(nodes * c / total) for c in DEFAULT_COUNTS[1:]]
    return (nodes - sum(rare), *rare)


def cmd_gen_data(args) -> int:
    counts = _feature_counts(args.nodes)
    try:
        graph = generate_triangle_node(args.seed, *counts, target_edges=args.edges,
                                       target_triangle_fraction=args.fraction)
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    dataset = triangle_node_dataset(graph, args.name)
    out = Path(args.out)
    write_tu_dataset(dataset, out, args.name)
    stats = {"seed": args.seed, "name": args.name, **realized_stats(graph)}
    (out / f"{args.name}_stats.json").write_text(_dump(stats))
    sys.stdout.write(_dump(stats))
    return EXIT_OK


# -- stats ---------------------------------------------------------------------

def _load(data: str, name: str) -> Dataset:
    try:
        return load_tu_dataset(data, name)
    except (ParseError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from None


def cmd_stats(args) -> int:
    from .wl import alternative_p_values, compute_p_statistic

    dataset = _load(args.data, args.name)
    if args.features == "uniform":
        dataset = uniform_features(dataset)
    elif args.features == "degree":
        dataset = degree_relabel(dataset)
    scope = args.scope or ("within" if dataset.task == "node" else "across")
    p, report = compute_p_statistic(dataset, scope)
    doc = report.to_dict()
    doc.update(dataset=dataset.name, features=args.features)
    if args.alternatives:
        doc["alternatives"] = alternative_p_values(dataset)
    _emit(doc, args.out)
    print(f"P = {100 * p:.1f}% ({scope}, {report.total_multisets} multisets)", file=sys.stderr)
    return EXIT_OK


# -- check ---------------------------------------------------------------------

def cmd_check(args) -> int:
    from .checks import run_suite

    result = run_suite(args.suite, seed=args.seed)
    _emit(result, args.out)
    failed = [c["name"] for c in result["checks"] if not c["passed"]]
    for name in failed:
        print(f"FAILED: {name}", file=sys.stderr)
    return EXIT_OK if result["passed"] else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    from .checks import gradient_suite

    reports = gradient_suite(args.seed)
    worst = max(r.details["max_deviation"] for r in reports)
    doc = {"seed": args.seed, "tolerance": reports[0].details["tol"], "max_deviation": worst,
           "passed": all(r.passed for r in reports), "checks": [r.to_dict() for r in reports]}
    _emit(doc, args.out)
    print(f"max deviation {worst:.3e}", file=sys.stderr)
    return EXIT_OK if doc["passed"] else EXIT_FAIL


# -- train ---------------------------------------------------------------------

EXPERIMENT_KEYS = {"data", "name", "out", "aggregator"}


def load_experiment(path: str | Path, seed: int | None = None, jobs: int | None = None):
    """Parse an experiment file into (dataset dir, name, out dir, variants, base config).

    Relative paths resolve against the file's directory.  Every problem
    found is reported at once.
    """
    from .training import ConfigError, TrainConfig

    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: expected a mapping of keys to values")

    problems = []
    for key in ("data", "name", "out"):
        if not isinstance(doc.get(key), str):
            problems.append(f"{key}: required string")
    aggregators = doc.get("aggregator", "original")
    if isinstance(aggregators, str):
        aggregators = [aggregators]
    if not isinstance(aggregators, list) or not aggregators:
        problems.append("aggregator: expected a name or a list of names")
        aggregators = []
    for a in aggregators:
        if a not in VARIANTS:
            problems.append(f"aggregator: unknown value {a!r}; expected one of {list(VARIANTS)}")
    train_keys = {k: v for k, v in doc.items() if k not in EXPERIMENT_KEYS}
    if "variant" in train_keys:
        problems.append("variant: not accepted here; use 'aggregator'")
        train_keys.pop("variant")
    if seed is not None:
        train_keys["seed"] = seed
    if jobs is not None:
        train_keys["jobs"] = jobs
    config = None
    try:
        config = TrainConfig.from_dict(train_keys)
    except ConfigError as exc:
        problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)

    base = path.parent
    data_dir = (base / doc["data"]).resolve()
    out_dir = (base / doc["out"]).resolve()
    return data_dir, doc["name"], out_dir, aggregators, config


def cmd_train(args) -> int:
    from dataclasses import replace

    from .training import ConfigError, run_cv, write_results

    try:
        data_dir, name, out_dir, variants, config = load_experiment(
            args.config, seed=args.seed, jobs=args.jobs)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_USAGE
    dataset = _load(str(data_dir), name)
    if dataset.task != config.task:
        print(f"config error: task: dataset is a {dataset.task}-level task, config says {config.task}",
              file=sys.stderr)
        return EXIT_USAGE

    results = {}
    for variant in variants:
        cfg = replace(config, variant=variant)
        log.info("training %s on %s", variant, name)
        try:
            results[variant] = run_cv(dataset, cfg)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"{variant}: {100 * results[variant].mean:.2f} ± {100 * results[variant].std:.2f}",
              file=sys.stderr)
    written = write_results(out_dir, results)
    resolved = {"data": str(data_dir), "name": name, "out": str(out_dir), "aggregator": variants,
                **{k: v for k, v in config.to_dict().items() if k not in ("variant", "jobs")}}
    manifest = {
        "version": __version__,
        "config": resolved,
        "files": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(written)},
    }
    (out_dir / "manifest.json").write_text(_dump(manifest))
    summary = out_dir / "summary.txt"
    if summary.exists():
        sys.stdout.write(summary.read_text())
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpa-gnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def seeded(p):
        p.add_argument("--seed", type=int, default=None,
                       help=f"random seed (default: ${SEED_ENV} or 0)")
        return p

    p = seeded(sub.add_parser("gen-data", help="write a TRIANGLE-NODE graph in TU format"))
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="TRIANGLE_NODE")
    p.add_argument("--nodes", type=int, default=None, help="total nodes; feature shares kept")
    p.add_argument("--edges", type=int, default=DEFAULT_EDGES)
    p.add_argument("--fraction", type=float, default=DEFAULT_FRACTION)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("stats", help="collision statistics of a TU dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--scope", choices=("within", "across"), default=None,
                   help="default: within for node tasks, across for graph tasks")
    p.add_argument("--features", choices=("stored", "uniform", "degree"), default="stored")
    p.add_argument("--alternatives", action="store_true", help="also report other counting rules")
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_stats)

    p = seeded(sub.add_parser("train", help="cross-validated training from a YAML config"))
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    p.set_defaults(func=cmd_train)

    p = seeded(sub.add_parser("check", help="run the property-check suites"))
    p.add_argument("--suite", choices=("theorem1", "corollaries", "all"), default="all")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check)

    p = seeded(sub.add_parser("gradcheck", help="finite-difference gradient checks"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if hasattr(args, "seed") and args.seed is None:
            if args.command != "train":
                args.seed = _default_seed()
            elif SEED_ENV in os.environ:
                # Only an explicit seed overrides the config file's own.
                args.seed = _default_seed()
        if getattr(args, "jobs", "absent") is None and args.command == "train":
            args.jobs = os.cpu_count() or 1
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
