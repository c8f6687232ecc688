"""Per-layer parameter/activation accounting and the plain-text layer summary.

Summary text layout (``emit_summary``)::

    Layer (type)             | Output Shape                 | Param #
    -------------------------+------------------------------+------------
    Linear-1                 | [-1, 8]                      | 40
    ReLU-2                   | [-1, 8]                      | 0
    Linear-3                 | [-1, 1]                      | 9
    ======================================================================
    Total params: 49
    Total activations: 17
    Batch size: 32

Cells are left-justified to the column width (at least 24 / 28 / 12
characters, widened to the longest cell), joined by `` | `` and stripped of
trailing blanks.  Layers are numbered from 1; activation-function layers are
named by their function.  Shapes carry ``-1`` for the batch dimension and
counts use thousands separators.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .archspec import ACTIVATIONS, LAYER_KINDS, ArchSpec, LayerSpec, layer_output_shape
from .errors import IntegrityError, ParseError, UnsupportedOp


@dataclass(frozen=True)
class LayerRecord:
    index: int
    kind: str
    output_shape: tuple[int, ...]
    trainable_params: int
    activations: int
    fn: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "output_shape", tuple(self.output_shape))
        if self.trainable_params < 0 or any(d < 1 for d in self.output_shape):
            raise ValueError(f"layer {self.index}: negative params or non-positive output dimension")
        if self.activations != math.prod(self.output_shape):
            raise ValueError(f"layer {self.index}: activations must equal the output element count")


@dataclass(frozen=True)
class ModelSummary:
    records: tuple[LayerRecord, ...]
    total_params: int
    total_activations: int
    batch_size: int
    layer_type_counts: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: Sequence[LayerRecord], batch_size: int) -> "ModelSummary":
        records = tuple(records)
        return cls(
            records=records,
            total_params=sum(r.trainable_params for r in records),
            total_activations=sum(r.activations for r in records),
            batch_size=batch_size,
            layer_type_counts=dict(sorted(Counter(r.kind for r in records).items())),
        )

    def count(self, kind: str) -> int:
        return self.layer_type_counts.get(kind, 0)


def layer_params(layer: LayerSpec) -> int:
    """Trainable parameter count of one layer (running statistics excluded)."""
    kind, p = layer.kind, layer.params
    if kind == "Linear":
        return p["in_features"] * p["out_features"] + (p["out_features"] if p.get("bias", True) else 0)
    if kind == "Conv2d":
        k = p["kernel_size"]
        return k * k * p["in_channels"] * p["out_channels"] + p["out_channels"]
    if kind in ("BatchNorm1d", "BatchNorm2d"):
        return 2 * p["num_features"]
    if kind == "LayerNorm":
        return 2 * p["dim"]
    if kind == "Embedding":
        return p["vocab_size"] * p["dim"]
    if kind == "MultiHeadAttention":
        d = p["embed_dim"]
        return 4 * (d * d + d)
    if kind == "FeedForward":
        d, ff = p["embed_dim"], p["ff_dim"]
        return d * ff + ff + ff * d + d
    if kind in ("Dropout", "Flatten", "Pool2d", "ActivationFn"):
        return 0
    raise UnsupportedOp(f"no accounting rule for layer kind {kind!r}")


def layer_accounting(layer: LayerSpec, input_shape: Sequence[int], index: int = 0) -> LayerRecord:
    if layer.kind == "CustomOp" or layer.kind not in LAYER_KINDS:
        raise UnsupportedOp(f"layer {index}: no accounting rule for {layer.kind!r}")
    out = layer_output_shape(layer, input_shape)
    return LayerRecord(
        index=index,
        kind=layer.kind,
        output_shape=out,
        trainable_params=layer_params(layer),
        activations=math.prod(out),
        fn=layer.params.get("fn") if layer.kind == "ActivationFn" else None,
    )


def summarize(spec: ArchSpec) -> ModelSummary:
    records = []
    shape = spec.input_shape
    for i, layer in enumerate(spec.layers):
        rec = layer_accounting(layer, shape, i)
        records.append(rec)
        shape = rec.output_shape
    return ModelSummary.from_records(records, spec.batch_size)


# --------------------------------------------------------------------------- #
# text format

HEADER = ("Layer (type)", "Output Shape", "Param #")
_MIN_WIDTHS = (24, 28, 12)
_SEP = " | "


def _row_name(rec: LayerRecord) -> str:
    return f"{rec.fn if rec.kind == 'ActivationFn' else rec.kind}-{rec.index + 1}"


def _fmt_shape(shape: Sequence[int]) -> str:
    return "[" + ", ".join(str(d) for d in (-1, *shape)) + "]"


def emit_summary(summary: ModelSummary) -> str:
    rows = [(_row_name(r), _fmt_shape(r.output_shape), f"{r.trainable_params:,}") for r in summary.records]
    widths = [max([m, len(h)] + [len(row[i]) for row in rows]) for i, (m, h) in enumerate(zip(_MIN_WIDTHS, HEADER))]

    def line(cells: Sequence[str]) -> str:
        return _SEP.join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [line(HEADER), "-+-".join("-" * w for w in widths)]
    out += [line(row) for row in rows]
    out.append("=" * (sum(widths) + len(_SEP) * 2))
    out.append(f"Total params: {summary.total_params:,}")
    out.append(f"Total activations: {summary.total_activations:,}")
    out.append(f"Batch size: {summary.batch_size:,}")
    return "\n".join(out) + "\n"


_NAME_RE = re.compile(r"^([A-Za-z][A-Za-z0-9]*)-(\d+)$")
_SHAPE_RE = re.compile(r"^\[(-?\d+(?:, -?\d+)*)\]$")
_ROW_KINDS = (set(LAYER_KINDS) - {"ActivationFn", "CustomOp"}) | set(ACTIVATIONS)


def _parse_int(text: str, lineno: int, what: str) -> int:
    cleaned = text.strip().replace(",", "")
    if not re.fullmatch(r"\d+", cleaned):
        raise ParseError(f"line {lineno}: bad {what} {text.strip()!r}")
    return int(cleaned)


def _footer(lines: list[str], pos: int, label: str) -> int:
    if pos >= len(lines) or not lines[pos].startswith(label + ":"):
        raise ParseError(f"line {pos + 1}: expected '{label}:' line")
    return _parse_int(lines[pos][len(label) + 1 :], pos + 1, label.lower())


def parse_summary(text: str) -> ModelSummary:
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) < 2 or [c.strip() for c in lines[0].split("|")] != list(HEADER):
        raise ParseError("line 1: missing summary header")
    if not lines[1].startswith("-"):
        raise ParseError("line 2: missing header separator")
    records: list[LayerRecord] = []
    pos = 2
    while pos < len(lines) and not lines[pos].startswith("="):
        lineno = pos + 1
        cells = [c.strip() for c in lines[pos].split("|")]
        if len(cells) != 3:
            raise ParseError(f"line {lineno}: malformed row {lines[pos]!r}")
        m = _NAME_RE.match(cells[0])
        if not m:
            raise ParseError(f"line {lineno}: malformed layer name {cells[0]!r}")
        token, number = m.group(1), int(m.group(2))
        if token not in _ROW_KINDS:
            raise ParseError(f"line {lineno}: unknown layer kind {token!r}")
        if number != len(records) + 1:
            raise ParseError(f"line {lineno}: layer number {number} out of sequence")
        s = _SHAPE_RE.match(cells[1])
        if not s:
            raise ParseError(f"line {lineno}: malformed output shape {cells[1]!r}")
        dims = [int(x) for x in s.group(1).split(", ")]
        if dims[0] != -1 or len(dims) < 2 or any(d < 1 for d in dims[1:]):
            raise ParseError(f"line {lineno}: output shape {cells[1]!r} must be [-1, positive dims...]")
        params = _parse_int(cells[2], lineno, "parameter count")
        is_act = token in ACTIVATIONS
        shape = tuple(dims[1:])
        records.append(
            LayerRecord(
                index=number - 1,
                kind="ActivationFn" if is_act else token,
                output_shape=shape,
                trainable_params=params,
                activations=math.prod(shape),
                fn=token if is_act else None,
            )
        )
        pos += 1
    if not records:
        raise ParseError("summary contains no layer rows")
    total_params = _footer(lines, pos + 1, "Total params")
    total_acts = _footer(lines, pos + 2, "Total activations")
    batch = _footer(lines, pos + 3, "Batch size")
    if len(lines) > pos + 4:
        raise ParseError(f"line {pos + 5}: unexpected trailing content")
    summary = ModelSummary.from_records(records, batch)
    if summary.total_params != total_params:
        raise IntegrityError(f"Total params {total_params:,} != sum of rows {summary.total_params:,}")
    if summary.total_activations != total_acts:
        raise IntegrityError(f"Total activations {total_acts:,} != sum of rows {summary.total_activations:,}")
    return summary
