"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/integrity error, 3 unsupported op.
Every artifact is written to a temporary sibling and renamed into place, so a
failing command leaves nothing behind.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .accounting import emit_summary, summarize
from .archspec import ArchSpec, load_generation_config, sample_spec, validate
from .dataset import (
    CLASS_COLUMNS,
    FEATURE_COLUMNS,
    UTILIZATION_EDGES,
    BinScheme,
    DatasetRow,
    discretize_memory,
    discretize_utilization,
    extract_features,
    feature_matrix,
    ingest_run_dir,
    label_rows,
    read_table,
    stratified_split,
    write_table,
)
from .errors import (
    ConfigError,
    DataError,
    GenerationError,
    ParseError,
    TrainingError,
    TrainMemError,
    UnsupportedOp,
)
from .estimators import MiB, analytic_estimate, peak_live_bytes, propagate_shapes
from .mlcore import EnsembleConfig, EnsembleModel, TrainHyper, cross_validate, evaluate, fit_ensemble, pca_project

DEFAULT_SEED = 0
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_UNSUPPORTED = 0, 1, 2, 3


class UsageError(TrainMemError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2
        raise UsageError(message)


# --------------------------------------------------------------------------- #
# atomic output


def atomic_write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_dir(path: str | Path, fill: Callable[[Path], None]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent))
    try:
        fill(tmp)
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
    return [fn(x) for x in items]


def _read_input(path: str | Path, what: str) -> str:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path.read_text()


def _load_spec(path: str | Path) -> ArchSpec:
    text = _read_input(path, "spec file")
    try:
        spec = ArchSpec.from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: cannot parse spec: {exc}") from None
    report = validate(spec)
    if not report.ok:
        raise DataError(f"{path}: invalid spec: {'; '.join(report.violations)}")
    return spec


def _emit(args, payload: dict | list[dict]) -> None:
    rows = payload if isinstance(payload, list) else [payload]
    if args.format == "csv":
        buf = io.StringIO()
        flat = [{k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()} for r in rows]
        w = csv.DictWriter(buf, fieldnames=list(flat[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(flat)
        sys.stdout.write(buf.getvalue())
    else:
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# --------------------------------------------------------------------------- #
# generate / summarize / estimate


def _generate_one(task):
    config, index, seed = task
    spec = sample_spec(config, index, seed)
    return spec.to_json(), emit_summary(summarize(spec))


def cmd_generate(args) -> int:
    config = load_generation_config(_read_input(args.config, "config file"))
    n = args.n if args.n is not None else config.num_random_configs
    if n < 1:
        raise UsageError("-n must be >= 1")
    seed = args.seed if args.seed is not None else config.seed
    out = Path(args.out) if args.out else Path(config.base_data_dir)
    results = _map(_generate_one, [(config, i, seed) for i in range(n)], args.jobs)
    width = max(5, len(str(n - 1)))

    def fill(root: Path) -> None:
        for i, (spec_json, summary_text) in enumerate(results):
            d = root / f"config_{i:0{width}d}"
            d.mkdir()
            (d / "spec.json").write_text(spec_json + "\n")
            (d / "summary.txt").write_text(summary_text)

    atomic_write_dir(out, fill)
    print(f"generated {n} {config.family} configurations in {out}", file=sys.stderr)
    return EXIT_OK


def cmd_summarize(args) -> int:
    spec = _load_spec(args.spec)
    text = emit_summary(summarize(spec))
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def estimate_spec(spec: ArchSpec, args, model: EnsembleModel | None = None) -> dict:
    t0 = time.perf_counter()
    if args.method == "analytic":
        est = analytic_estimate(
            summarize(spec), args.optimizer, args.elem_bytes, int(args.overhead_mb * MiB)
        )
    elif args.method == "shapeprop":
        est = peak_live_bytes(propagate_shapes(spec), args.elem_bytes, args.optimizer, int(args.margin_mb * MiB))
    else:
        return ml_estimate(spec, model)
    elapsed = (time.perf_counter() - t0) * 1e3
    if args.bin_mb:
        label = discretize_memory(est.estimated_bytes / MiB, BinScheme.fixed(args.bin_mb))
        est = type(est)(est.method, est.estimated_bytes, est.margin_bytes, est.elem_bytes, est.optimizer, label)
    return est.report(elapsed)


def ml_estimate(spec: ArchSpec, model: EnsembleModel) -> dict:
    """Upper edge of the predicted memory bin, with the class index."""
    t0 = time.perf_counter()
    features = extract_features(summarize(spec), spec)
    if model.families and features.family not in model.families:
        raise UnsupportedOp(f"model was trained on {', '.join(model.families)} configurations, not {features.family}")
    _, labels = model.predict(features.as_array()[None, :])
    label = int(labels[0])
    lo, hi = model.bin_scheme.interval(label)
    elapsed = (time.perf_counter() - t0) * 1e3
    return {"method": "ml", "estimated_mb": float(hi), "margin_mb": float(hi - lo), "bin": label, "elapsed_ms": elapsed}


def load_model(path: str | Path) -> EnsembleModel:
    text = _read_input(path, "model file")
    try:
        return EnsembleModel.from_json(text)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: cannot load model: {exc}") from None


def cmd_estimate(args) -> int:
    model = None
    if args.method == "ml":
        if not args.model:
            raise UsageError("--model is required with --method ml")
        model = load_model(args.model)
        if model.target != "mem" or model.bin_scheme is None or model.bin_scheme.kind != "fixed_width":
            raise DataError(f"{args.model}: not a memory model")
    elif args.model:
        raise UsageError("--model is only valid with --method ml")
    spec = _load_spec(args.spec)
    report = estimate_spec(spec, args, model)
    if args.out:
        atomic_write_text(args.out, json.dumps(report, sort_keys=True) + "\n")
    _emit(args, report)
    return EXIT_OK


# --------------------------------------------------------------------------- #
# ingest / featurize


def _run_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise UsageError(f"runs directory not found: {root}")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not dirs:
        raise DataError(f"{root}: no run directories")
    return dirs


def cmd_ingest(args) -> int:
    rows = _map(ingest_run_dir, _run_dirs(Path(args.runs)), args.jobs)
    atomic_write_text(args.out, write_table(rows))
    print(f"ingested {len(rows)} runs into {args.out}", file=sys.stderr)
    return EXIT_OK


def _analytic_row(task) -> DatasetRow:
    path, seed, index, noise, optimizer = task
    try:
        spec = ArchSpec.from_json((path / "spec.json").read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: missing spec.json") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}/spec.json: {exc}") from None
    summary = summarize(spec)
    mb = analytic_estimate(summary, optimizer).estimated_bytes / MiB
    if noise:
        mb *= float(np.random.default_rng([seed, index]).uniform(1.0 - noise, 1.0 + noise))
    return DatasetRow(extract_features(summary, spec), mb)


def cmd_featurize(args) -> int:
    src = Path(args.input)
    if args.label_source == "analytic":
        dirs = _run_dirs(src)
        seed = DEFAULT_SEED if args.seed is None else args.seed
        tasks = [(d, seed, i, args.noise, args.optimizer) for i, d in enumerate(dirs)]
        rows = _map(_analytic_row, tasks, args.jobs)
    else:
        if src.is_dir():
            rows = _map(ingest_run_dir, _run_dirs(src), args.jobs)
        else:
            rows = read_table(_read_input(src, "dataset CSV"))
    if not rows:
        raise DataError(f"{src}: no rows")
    util = {}
    for metric in ("smact", "smocc", "drama"):
        edges = getattr(args, f"{metric}_edges")
        util[metric] = BinScheme.utilization(edges) if edges else None
    rows = label_rows(rows, BinScheme.fixed(args.bin_mb), util)
    atomic_write_text(args.out, write_table(rows))
    print(f"wrote {len(rows)} labelled rows to {args.out}", file=sys.stderr)
    return EXIT_OK


# --------------------------------------------------------------------------- #
# train / evaluate


_TARGET_COLUMN = {"mem": "peak_mem_mb", "smact": "smact", "smocc": "smocc", "drama": "drama"}


def _target_scheme(rows: Sequence[DatasetRow], target: str, bin_mb: float | None, edges) -> BinScheme:
    if target == "mem":
        return BinScheme.fixed(bin_mb or 1024.0)
    if edges:
        return BinScheme.utilization(edges)
    families = {r.features.family for r in rows}
    if len(families) != 1:
        raise UsageError(f"rows mix families {sorted(families)}; pass --edges for {target}")
    return BinScheme("explicit_edges", edges=UTILIZATION_EDGES[(families.pop(), target)])


def target_labels(rows: Sequence[DatasetRow], target: str, scheme: BinScheme) -> np.ndarray:
    col = _TARGET_COLUMN[target]
    if target == "mem":
        return np.array([discretize_memory(r.peak_mem_mb, scheme) for r in rows], dtype=np.int64)
    return np.array([discretize_utilization(getattr(r, col), scheme) for r in rows], dtype=np.int64)


def holdout_split(y: np.ndarray, fraction: float, folds: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified holdout that leaves at least ``folds`` rows of each class
    in the training pool, so cross-validation can always run."""
    if fraction == 0.0:
        return np.arange(len(y)), np.arange(0)
    train_idx, test_idx = stratified_split(y, fraction, seed)
    keep = np.ones(len(test_idx), dtype=bool)
    for c in np.unique(y):
        short = folds - int((y[train_idx] == c).sum())
        if short > 0:
            keep[np.flatnonzero(y[test_idx] == c)[:short]] = False
    return np.concatenate([train_idx, test_idx[~keep]]), test_idx[keep]


def cmd_train(args) -> int:
    rows = read_table(_read_input(args.csv, "dataset CSV"))
    if not rows:
        raise DataError(f"{args.csv}: no rows")
    scheme = _target_scheme(rows, args.target, args.bin_mb, args.edges)
    y = target_labels(rows, args.target, scheme)
    X = feature_matrix(rows)
    seed = DEFAULT_SEED if args.seed is None else args.seed

    counts = {int(c): int(n) for c, n in zip(*np.unique(y, return_counts=True))}
    if not 0.0 <= args.test_fraction < 1.0:
        raise UsageError("--test-fraction must lie in [0, 1)")
    if min(counts.values()) < args.folds:
        raise DataError(f"class-starved dataset: every class needs >= {args.folds} rows, counts {counts}")
    train_idx, test_idx = holdout_split(y, args.test_fraction, args.folds, seed)

    config = EnsembleConfig(
        n_members=args.members,
        hidden_layers=(args.min_layers, args.max_layers),
        max_width=args.max_width,
        min_width=args.min_width,
        log2_widths=not args.literal_widths,
        seed=seed,
    )
    hyper = TrainHyper(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=seed)
    cv = cross_validate(X[train_idx], y[train_idx], config, hyper, k=args.folds, seed=seed, jobs=args.jobs)
    families = sorted({rows[i].features.family for i in train_idx})
    model = fit_ensemble(
        X[train_idx], y[train_idx], config, hyper, target=args.target, bin_scheme=scheme,
        families=families, jobs=args.jobs,
    )
    result = {
        "target": args.target,
        "bin_scheme": scheme.to_dict(),
        "class_counts": {str(k): v for k, v in counts.items()},
        **cv.to_dict(),
    }
    if len(test_idx):
        result["test"] = {"classes": model.classes, **evaluate(model, X[test_idx], y[test_idx]).to_dict()}
    atomic_write_text(args.out, model.to_json() + "\n")
    if args.metrics_out:
        atomic_write_text(args.metrics_out, json.dumps(result, indent=2, sort_keys=True) + "\n")
    if args.test_out and len(test_idx):
        atomic_write_text(args.test_out, write_table([rows[i] for i in test_idx]))
    _emit(args, result if args.format == "json" else _metrics_row(result))
    return EXIT_OK


def _metrics_row(result: dict) -> dict:
    return {k: result[k] for k in ("accuracy", "macro_f1", "per_class_recall")}


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    rows = read_table(_read_input(args.csv, "dataset CSV"))
    if not rows:
        raise DataError(f"{args.csv}: no rows")
    y = target_labels(rows, model.target, model.bin_scheme)
    metrics = evaluate(model, feature_matrix(rows), y)
    result = {"target": model.target, "classes": model.classes, "n_rows": len(rows), **metrics.to_dict()}
    if args.out:
        atomic_write_text(args.out, json.dumps(result, indent=2, sort_keys=True) + "\n")
    _emit(args, result if args.format == "json" else _metrics_row(result))
    return EXIT_OK


# --------------------------------------------------------------------------- #
# pca


def cmd_pca(args) -> int:
    rows = read_table(_read_input(args.csv, "dataset CSV"))
    if len(rows) < 2:
        raise DataError("pca needs at least two rows")
    if not 1 <= args.k <= len(FEATURE_COLUMNS):
        raise UsageError(f"k must lie in [1, {len(FEATURE_COLUMNS)}]")
    label_col = args.label
    res = pca_project(feature_matrix(rows), args.k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"pc{i + 1}" for i in range(args.k)] + [label_col])
    for proj, r in zip(res.projections, rows):
        label = getattr(r, label_col)
        w.writerow([repr(float(x)) for x in proj] + ["" if label is None else label])
    ratios = io.StringIO()
    rw = csv.writer(ratios, lineterminator="\n")
    rw.writerow(["component", "explained_ratio"])
    for i, r in enumerate(res.explained_ratio):
        rw.writerow([f"pc{i + 1}", repr(float(r))])
    out = Path(args.out)
    ratios_path = out.with_name(out.stem + "_variance.csv")
    atomic_write_text(ratios_path, ratios.getvalue())
    atomic_write_text(out, buf.getvalue())
    return EXIT_OK


# --------------------------------------------------------------------------- #
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=f"random seed (default {DEFAULT_SEED})")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes (default 1)")
    common.add_argument("--format", choices=("json", "csv"), default=argparse.SUPPRESS, help="stdout format")

    parser = _Parser(prog="trainmem", description="GPU memory estimation for training configurations")
    parser.add_argument("--version", action="version", version=f"trainmem {__version__}")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="sample architecture specs from a YAML config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: base_data_dir from the config)")
    p.add_argument("-n", type=int, help="override num_random_configs")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("summarize", parents=[common], help="print the layer summary of a spec")
    p.add_argument("spec")
    p.add_argument("--out")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("estimate", parents=[common], help="estimate training memory of a spec")
    p.add_argument("spec")
    p.add_argument("--method", choices=("analytic", "shapeprop", "ml"), default="analytic")
    p.add_argument("--model", help="trained ensemble (required for --method ml)")
    p.add_argument("--optimizer", choices=("SGD", "SGDMomentum", "Adam"), default="Adam")
    p.add_argument("--elem-bytes", type=int, default=4)
    p.add_argument("--overhead-mb", type=float, default=600.0, help="analytic framework overhead (MiB)")
    p.add_argument("--margin-mb", type=float, default=4096.0, help="shapeprop safety margin (MiB)")
    p.add_argument("--bin-mb", type=float, help="also report the fixed-width bin of the estimate")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("ingest", parents=[common], help="build a dataset CSV from recorded run directories")
    p.add_argument("runs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", parents=[common], help="label rows with memory/utilization classes")
    p.add_argument("input", help="dataset CSV, runs directory, or generated directory (--label-source analytic)")
    p.add_argument("--out", required=True)
    p.add_argument("--label-source", choices=("measured", "analytic"), default="measured")
    p.add_argument("--bin-mb", type=float, default=1024.0)
    p.add_argument("--noise", type=float, default=0.0, help="multiplicative label noise for analytic labels")
    p.add_argument("--optimizer", choices=("SGD", "SGDMomentum", "Adam"), default="Adam")
    for metric in ("smact", "smocc", "drama"):
        p.add_argument(f"--{metric}-edges", type=_floats, help="interior cut points, e.g. 0.2,0.7")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="cross-validate and train an ensemble")
    p.add_argument("csv")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--target", choices=tuple(_TARGET_COLUMN), default="mem")
    p.add_argument("--bin-mb", type=float, help="memory bin width in MiB (default 1024)")
    p.add_argument("--edges", type=_floats, help="utilization interior cut points")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--members", type=int, default=EnsembleConfig.n_members)
    p.add_argument("--min-layers", type=int, default=EnsembleConfig.hidden_layers[0])
    p.add_argument("--max-layers", type=int, default=EnsembleConfig.hidden_layers[1])
    p.add_argument("--max-width", type=int, default=EnsembleConfig.max_width)
    p.add_argument("--min-width", type=int, default=EnsembleConfig.min_width)
    p.add_argument("--literal-widths", action="store_true", help="width bounds are neuron counts, not exponents")
    p.add_argument("--epochs", type=int, default=TrainHyper.epochs)
    p.add_argument("--batch-size", type=int, default=TrainHyper.batch_size)
    p.add_argument("--lr", type=float, default=TrainHyper.learning_rate)
    p.add_argument("--metrics-out")
    p.add_argument("--test-out", help="write the held-out rows as a dataset CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a trained ensemble on a dataset CSV")
    p.add_argument("model")
    p.add_argument("csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pca", parents=[common], help="project a dataset onto its principal components")
    p.add_argument("csv")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--label", choices=CLASS_COLUMNS, default="mem_class")
    p.set_defaults(func=cmd_pca)
    return parser


def main(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except (UsageError, ConfigError, GenerationError) as exc:
        print(f"trainmem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnsupportedOp as exc:
        print(f"trainmem: unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (DataError, ParseError, TrainingError) as exc:
        print(f"trainmem: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except argparse.ArgumentTypeError as exc:
        print(f"trainmem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
