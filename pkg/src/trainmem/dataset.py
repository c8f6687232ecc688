"""Feature extraction, target discretization, recorded-run ingestion, the
dataset CSV format and stratified splitting."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .accounting import ModelSummary, parse_summary
from .archspec import ACTIVATIONS, ArchSpec
from .errors import DataError, ParseError

MONITOR_HEADER = ("timestamp_s", "mem_mb", "smact", "smocc", "drama")

FEATURE_COLUMNS = (
    "batch_size",
    "total_params",
    "total_activations",
    "act_x_batch",
    "n_linear",
    "n_conv2d",
    "n_batchnorm",
    "n_dropout",
    "n_layernorm",
    "n_attention",
    "n_embedding",
    "act_cos",
    "act_sin",
)
TARGET_COLUMNS = ("peak_mem_mb", "smact", "smocc", "drama")
BASE_COLUMNS = FEATURE_COLUMNS + TARGET_COLUMNS
CLASS_COLUMNS = ("mem_class", "smact_class", "smocc_class", "drama_class")
_FLOAT_FEATURES = {"act_cos", "act_sin"}

# Low/medium/high utilization edges per family and metric.
UTILIZATION_EDGES = {
    ("MLP", "smact"): (0.0, 0.2, 0.7, 1.0),
    ("MLP", "smocc"): (0.0, 0.1, 0.3, 1.0),
    ("MLP", "drama"): (0.0, 0.2, 0.7, 1.0),
    ("CNN", "smact"): (0.0, 0.3, 0.9, 1.0),
    ("CNN", "smocc"): (0.0, 0.1, 0.3, 1.0),
    ("CNN", "drama"): (0.0, 0.3, 0.9, 1.0),
    ("Transformer", "smact"): (0.0, 0.3, 0.8, 1.0),
    ("Transformer", "smocc"): (0.0, 0.3, 0.4, 1.0),
    ("Transformer", "drama"): (0.0, 0.3, 0.8, 1.0),
}


@dataclass(frozen=True)
class FeatureVector:
    batch_size: int
    total_params: int
    total_activations: int
    act_x_batch: int
    n_linear: int = 0
    n_conv2d: int = 0
    n_batchnorm: int = 0
    n_dropout: int = 0
    n_layernorm: int = 0
    n_attention: int = 0
    n_embedding: int = 0
    act_cos: float = 1.0
    act_sin: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([float(getattr(self, c)) for c in FEATURE_COLUMNS])

    @property
    def family(self) -> str:
        return infer_family(self)


def infer_family(features: FeatureVector) -> str:
    if features.n_embedding or features.n_attention:
        return "Transformer"
    if features.n_conv2d:
        return "CNN"
    return "MLP"


def activation_encoding(fn: str) -> tuple[float, float]:
    """Unit-circle code for an activation function: angle 2*pi*i/N."""
    i = ACTIVATIONS.index(fn)
    angle = 2.0 * math.pi * i / len(ACTIVATIONS)
    return math.cos(angle), math.sin(angle)


def extract_features(summary: ModelSummary, spec: ArchSpec | None = None) -> FeatureVector:
    """Features of one configuration.

    Without ``spec`` the activation function is taken from the first
    activation layer of the summary (ReLU when there is none).
    """
    if spec is not None:
        fn = spec.activation_fn
    else:
        fn = next((r.fn for r in summary.records if r.kind == "ActivationFn"), "ReLU")
    cos, sin = activation_encoding(fn)
    c = summary.count
    return FeatureVector(
        batch_size=summary.batch_size,
        total_params=summary.total_params,
        total_activations=summary.total_activations,
        act_x_batch=summary.total_activations * summary.batch_size,
        n_linear=c("Linear"),
        n_conv2d=c("Conv2d"),
        n_batchnorm=c("BatchNorm1d") + c("BatchNorm2d"),
        n_dropout=c("Dropout"),
        n_layernorm=c("LayerNorm"),
        n_attention=c("MultiHeadAttention"),
        n_embedding=c("Embedding"),
        act_cos=cos,
        act_sin=sin,
    )


# --------------------------------------------------------------------------- #
# discretization


@dataclass(frozen=True)
class BinScheme:
    kind: str
    width_mb: float | None = None
    edges: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind == "fixed_width":
            if self.width_mb is None or not self.width_mb > 0:
                raise ValueError("fixed_width scheme needs width_mb > 0")
        elif self.kind == "explicit_edges":
            if self.edges is None or len(self.edges) < 2:
                raise ValueError("explicit_edges scheme needs at least two edges")
            e = tuple(float(x) for x in self.edges)
            if any(b <= a for a, b in zip(e, e[1:])):
                raise ValueError(f"edges must be strictly increasing: {e}")
            if e[0] != 0.0 or e[-1] != 1.0:
                raise ValueError(f"utilization edges must span [0, 1]: {e}")
            object.__setattr__(self, "edges", e)
        else:
            raise ValueError(f"unknown bin scheme kind {self.kind!r}")

    @classmethod
    def fixed(cls, width_mb: float) -> "BinScheme":
        return cls("fixed_width", width_mb=float(width_mb))

    @classmethod
    def utilization(cls, inner: Sequence[float]) -> "BinScheme":
        """Edges from the interior cut points, e.g. ``(0.2, 0.7)``."""
        return cls("explicit_edges", edges=(0.0, *inner, 1.0))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "width_mb": self.width_mb, "edges": list(self.edges) if self.edges else None}

    @classmethod
    def from_dict(cls, d: dict) -> "BinScheme":
        return cls(d["kind"], d.get("width_mb"), tuple(d["edges"]) if d.get("edges") else None)

    def interval(self, label: int) -> tuple[float, float]:
        if self.kind == "fixed_width":
            return label * self.width_mb, (label + 1) * self.width_mb
        return self.edges[label], self.edges[label + 1]


def discretize_memory(peak_mem_mb: float, scheme: BinScheme) -> int:
    """Fixed-width class index; intervals are [k*w, (k+1)*w)."""
    if scheme.kind != "fixed_width":
        raise ValueError("memory discretization needs a fixed_width scheme")
    if not peak_mem_mb >= 0:
        raise ValueError(f"peak memory must be non-negative, got {peak_mem_mb}")
    return int(math.floor(peak_mem_mb / scheme.width_mb))


def discretize_utilization(value: float, scheme: BinScheme) -> int:
    """Index of the half-open interval holding ``value``; the top one is closed."""
    if scheme.kind != "explicit_edges":
        raise ValueError("utilization discretization needs an explicit_edges scheme")
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"utilization {value} outside [0, 1]")
    edges = scheme.edges
    for k in range(len(edges) - 2, -1, -1):
        if value >= edges[k]:
            return k
    return 0


# --------------------------------------------------------------------------- #
# rows and CSV


@dataclass(frozen=True)
class DatasetRow:
    features: FeatureVector
    peak_mem_mb: float
    smact: float = 0.0
    smocc: float = 0.0
    drama: float = 0.0
    mem_class: int | None = None
    smact_class: int | None = None
    smocc_class: int | None = None
    drama_class: int | None = None

    def __post_init__(self) -> None:
        for name in ("smact", "smocc", "drama"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DataError(f"{name} mean {getattr(self, name)} outside [0, 1]")
        if not self.peak_mem_mb >= 0:
            raise DataError(f"peak_mem_mb must be non-negative, got {self.peak_mem_mb}")

    def value(self, column: str) -> float:
        if column in FEATURE_COLUMNS:
            return getattr(self.features, column)
        return getattr(self, column)

    def with_classes(self, **classes: int | None) -> "DatasetRow":
        return replace(self, **classes)


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def write_table(rows: Sequence[DatasetRow]) -> str:
    """Dataset CSV text; class columns appear when any row carries them."""
    if not rows:
        raise DataError("write_table needs at least one row")
    classes = [c for c in CLASS_COLUMNS if any(getattr(r, c) is not None for r in rows)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BASE_COLUMNS + tuple(classes))
    for r in rows:
        w.writerow([_fmt(r.value(c)) for c in BASE_COLUMNS] + [_fmt(getattr(r, c)) for c in classes])
    return buf.getvalue()


def _cell(text: str, column: str, lineno: int) -> float | int | None:
    try:
        if column in CLASS_COLUMNS:
            return None if text == "" else int(text)
        if column in FEATURE_COLUMNS and column not in _FLOAT_FEATURES:
            return int(text)
        value = float(text)
    except ValueError:
        raise DataError(f"line {lineno}: non-numeric cell {text!r} in column {column}") from None
    if not math.isfinite(value):
        raise DataError(f"line {lineno}: non-finite cell {text!r} in column {column}")
    return value


def read_table(text: str) -> list[DatasetRow]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise DataError("empty table: header missing") from None
    n_base = len(BASE_COLUMNS)
    classes = header[n_base:]
    expected = tuple(c for c in CLASS_COLUMNS if c in classes)
    if header[:n_base] != BASE_COLUMNS or classes != expected or len(set(classes)) != len(classes):
        raise DataError(f"header mismatch: expected {','.join(BASE_COLUMNS)}[,class columns]")
    rows = []
    for lineno, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} cells, got {len(cells)}")
        vals = {c: _cell(t.strip(), c, lineno) for c, t in zip(header, cells)}
        feats = FeatureVector(**{c: vals[c] for c in FEATURE_COLUMNS})
        try:
            rows.append(
                DatasetRow(
                    feats,
                    vals["peak_mem_mb"],
                    vals["smact"],
                    vals["smocc"],
                    vals["drama"],
                    **{c: vals[c] for c in classes},
                )
            )
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
    return rows


def feature_matrix(rows: Sequence[DatasetRow]) -> np.ndarray:
    return np.array([r.features.as_array() for r in rows], dtype=np.float64).reshape(len(rows), len(FEATURE_COLUMNS))


def label_rows(
    rows: Iterable[DatasetRow],
    mem_scheme: BinScheme | None = None,
    util_schemes: dict | None = None,
) -> list[DatasetRow]:
    """Append class columns.

    ``util_schemes`` maps metric name to a BinScheme, or to ``None`` to use
    the per-family default edges.
    """
    out = []
    for r in rows:
        classes: dict[str, int] = {}
        if mem_scheme is not None:
            classes["mem_class"] = discretize_memory(r.peak_mem_mb, mem_scheme)
        for metric, scheme in (util_schemes or {}).items():
            if scheme is None:
                scheme = BinScheme("explicit_edges", edges=UTILIZATION_EDGES[(r.features.family, metric)])
            classes[f"{metric}_class"] = discretize_utilization(getattr(r, metric), scheme)
        out.append(r.with_classes(**classes))
    return out


# --------------------------------------------------------------------------- #
# ingestion


def _read_monitor(path: Path) -> dict[str, float]:
    if not path.is_file():
        raise DataError(f"missing monitor log: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MONITOR_HEADER:
            raise DataError(f"{path}: header must be {','.join(MONITOR_HEADER)}")
        samples = []
        for rowno, cells in enumerate(reader, start=1):
            if not cells:
                continue
            try:
                values = [float(c) for c in cells]
            except ValueError:
                raise DataError(f"{path}: unparseable row {rowno}: {','.join(cells)}") from None
            if len(values) != len(MONITOR_HEADER) or not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}: unparseable row {rowno}: {','.join(cells)}")
            samples.append(values)
    if not samples:
        raise DataError(f"{path}: empty monitor log")
    data = np.array(samples)
    return {
        "peak_mem_mb": float(data[:, 1].max()),
        "smact": float(data[:, 2].mean()),
        "smocc": float(data[:, 3].mean()),
        "drama": float(data[:, 4].mean()),
    }


def ingest_run_dir(path: str | Path) -> DatasetRow:
    """Build one row from ``summary.txt`` + ``monitor.csv`` (+ optional ``spec.json``)."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"not a run directory: {path}")
    summary_path = path / "summary.txt"
    if not summary_path.is_file():
        raise DataError(f"missing summary: {summary_path}")
    monitor = _read_monitor(path / "monitor.csv")
    try:
        summary = parse_summary(summary_path.read_text())
    except ParseError as exc:
        raise DataError(f"{summary_path}: {exc}") from None
    spec = None
    spec_path = path / "spec.json"
    if spec_path.is_file():
        try:
            spec = ArchSpec.from_json(spec_path.read_text())
        except (ValueError, KeyError) as exc:
            raise DataError(f"{spec_path}: {exc}") from None
    try:
        return DatasetRow(extract_features(summary, spec), **monitor)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------- #
# stratification


def _apportion(counts: np.ndarray, fraction: float) -> np.ndarray:
    """Largest-remainder allocation of round(fraction * total) over classes.

    Every class receives floor or ceil of its exact share.
    """
    exact = counts * fraction
    base = np.floor(exact).astype(np.int64)
    total = int(math.floor(counts.sum() * fraction + 0.5))
    rest = total - int(base.sum())
    if rest > 0:
        # stable tie-break on class order
        order = np.lexsort((np.arange(len(counts)), -(exact - base)))
        base[order[:rest]] += 1
    return base


def _groups(labels: np.ndarray, n_classes: int | None) -> tuple[np.ndarray, list[np.ndarray]]:
    classes = np.unique(labels)
    if n_classes is not None:
        missing = sorted(set(range(n_classes)) - set(classes.tolist()))
        if missing:
            raise DataError(f"classes with zero rows: {missing}")
    return classes, [np.flatnonzero(labels == c) for c in classes]


def stratified_split(
    labels: Sequence[int],
    test_fraction: float,
    seed: int,
    n_classes: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Train/test row indices with per-class proportions preserved."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("cannot split an empty dataset")
    _, groups = _groups(labels, n_classes)
    n_test = _apportion(np.array([len(g) for g in groups]), test_fraction)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for g, k in zip(groups, n_test):
        perm = rng.permutation(g)
        test.append(perm[:k])
        train.append(perm[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_kfold(
    labels: Sequence[int],
    k: int,
    seed: int,
    val_fraction: float = 0.3,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """``k`` (train, validation) index pairs over the same pool.

    Each fold validates on a stratified ``val_fraction`` of every class and
    trains on the rest.  Validation windows rotate through one per-class
    permutation, so they are disjoint across folds whenever
    ``val_fraction <= 1/k``.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    labels = np.asarray(labels)
    _, groups = _groups(labels, None)
    small = [len(g) for g in groups if len(g) < k]
    if small:
        raise DataError(f"class with {min(small)} rows is smaller than k={k}")
    n_val = _apportion(np.array([len(g) for g in groups]), val_fraction)
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(g) for g in groups]
    folds = []
    for i in range(k):
        val = []
        for perm, v in zip(perms, n_val):
            start = i * len(perm) // k
            val.append(perm[(start + np.arange(v)) % len(perm)])
        val_idx = np.sort(np.concatenate(val))
        train_idx = np.setdiff1d(np.arange(labels.size), val_idx)
        folds.append((train_idx, val_idx))
    return folds

