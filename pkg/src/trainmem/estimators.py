"""Non-learned memory estimators: a closed-form analytical pass and
shape propagation with a training-mode liveness peak.  Also percentile
error reporting against measured memory."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .accounting import ModelSummary
from .archspec import ArchSpec, LayerSpec, layer_output_shape
from .errors import UnsupportedOp

MiB = 2**20
GiB = 2**30

OPTIMIZER_STATES = {"SGD": 0, "SGDMomentum": 1, "Adam": 2}
DEFAULT_OVERHEAD_BYTES = 600 * MiB
DEFAULT_MARGIN_BYTES = 4 * GiB
ROLES = ("input", "output", "weight", "gradient", "optimizer_state")


@dataclass(frozen=True)
class MemoryEstimate:
    method: str
    estimated_bytes: int
    margin_bytes: int
    elem_bytes: int = 4
    optimizer: str = "Adam"
    bin_label: int | None = None

    def __post_init__(self) -> None:
        if not self.estimated_bytes >= self.margin_bytes >= 0:
            raise ValueError("need estimated_bytes >= margin_bytes >= 0")

    @property
    def estimated_mb(self) -> float:
        return self.estimated_bytes / MiB

    def report(self, elapsed_ms: float | None = None) -> dict:
        return {
            "method": self.method,
            "estimated_mb": self.estimated_bytes / MiB,
            "margin_mb": self.margin_bytes / MiB,
            "bin": self.bin_label,
            "elapsed_ms": elapsed_ms,
        }


def _optimizer_states(optimizer: str) -> int:
    try:
        return OPTIMIZER_STATES[optimizer]
    except KeyError:
        raise ValueError(f"unknown optimizer {optimizer!r}; expected one of {list(OPTIMIZER_STATES)}") from None


def analytic_estimate(
    summary: ModelSummary,
    optimizer: str = "Adam",
    elem_bytes: int = 4,
    overhead_bytes: int = DEFAULT_OVERHEAD_BYTES,
    activation_factor: int = 2,
) -> MemoryEstimate:
    """Weights + gradients + optimizer states + activations * batch + overhead.

    ``activation_factor`` counts the forward tensor and its backward buffer.
    """
    if summary.total_params <= 0 or summary.total_activations <= 0 or summary.batch_size <= 0:
        raise ValueError("analytic_estimate needs positive parameter, activation and batch totals")
    o = _optimizer_states(optimizer)
    p, a, b = summary.total_params, summary.total_activations, summary.batch_size
    total = overhead_bytes + elem_bytes * (p * (2 + o) + activation_factor * a * b)
    return MemoryEstimate("analytic", int(total), int(overhead_bytes), elem_bytes, optimizer)


# --------------------------------------------------------------------------- #
# shape propagation


@dataclass(frozen=True)
class TraceEvent:
    tensor_id: int
    op_index: int
    role: str
    shape: tuple[int, ...]
    alloc: bool
    slot: int = 0

    @property
    def numel(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True)
class ShapeTrace:
    """Ordered alloc/free events.  Optimizer-state tensors carry a ``slot``
    (0 = first moment / momentum, 1 = second moment) so one trace serves
    every optimizer."""

    events: tuple[TraceEvent, ...]
    batch_size: int = 1

    def outputs(self) -> list[tuple[int, ...]]:
        return [e.shape for e in self.events if e.alloc and e.role == "output"]

    def check(self) -> None:
        live: dict[int, TraceEvent] = {}
        for e in self.events:
            if e.role not in ROLES:
                raise ValueError(f"unknown tensor role {e.role!r}")
            if e.alloc:
                if any(d < 1 for d in e.shape):
                    raise ValueError(f"tensor {e.tensor_id}: non-positive dimension in {e.shape}")
                if e.tensor_id in live:
                    raise ValueError(f"tensor {e.tensor_id} allocated twice")
                live[e.tensor_id] = e
            else:
                prior = live.pop(e.tensor_id, None)
                if prior is None or prior.shape != e.shape:
                    raise ValueError(f"free of tensor {e.tensor_id} without a matching prior alloc")


def _param_shapes(layer: LayerSpec) -> list[tuple[int, ...]]:
    kind, p = layer.kind, layer.params
    if kind == "Linear":
        shapes = [(p["out_features"], p["in_features"])]
        return shapes + [(p["out_features"],)] if p.get("bias", True) else shapes
    if kind == "Conv2d":
        k = p["kernel_size"]
        return [(p["out_channels"], p["in_channels"], k, k), (p["out_channels"],)]
    if kind in ("BatchNorm1d", "BatchNorm2d"):
        return [(p["num_features"],), (p["num_features"],)]
    if kind == "LayerNorm":
        return [(p["dim"],), (p["dim"],)]
    if kind == "Embedding":
        return [(p["vocab_size"], p["dim"])]
    if kind == "MultiHeadAttention":
        d = p["embed_dim"]
        return [(3 * d, d), (3 * d,), (d, d), (d,)]
    if kind == "FeedForward":
        d, ff = p["embed_dim"], p["ff_dim"]
        return [(ff, d), (ff,), (d, ff), (d,)]
    return []


def propagate_shapes(spec: ArchSpec) -> ShapeTrace:
    """Training-step trace: parameters, forward outputs, then backward.

    Parameters, gradients and both optimizer-state slots are allocated up
    front.  Forward outputs stay live until the end of the trace.  The
    backward pass walks layers in reverse, allocating the gradient w.r.t.
    each layer's input before releasing the gradient w.r.t. its output.
    """
    for i, layer in enumerate(spec.layers):
        if layer.kind == "CustomOp":
            raise UnsupportedOp(f"layer {i}: shape propagation does not support {layer.params.get('name', 'CustomOp')!r}")

    events: list[TraceEvent] = []
    next_id = 0

    def alloc(op: int, role: str, shape: tuple[int, ...], slot: int = 0) -> TraceEvent:
        nonlocal next_id
        e = TraceEvent(next_id, op, role, tuple(shape), True, slot)
        next_id += 1
        events.append(e)
        return e

    def free(e: TraceEvent) -> None:
        events.append(TraceEvent(e.tensor_id, e.op_index, e.role, e.shape, False, e.slot))

    b = spec.batch_size
    for i, layer in enumerate(spec.layers):
        for shape in _param_shapes(layer):
            alloc(i, "weight", shape)
            alloc(i, "gradient", shape)
            alloc(i, "optimizer_state", shape, 0)
            alloc(i, "optimizer_state", shape, 1)

    in_shapes = [spec.input_shape]
    tensors = [alloc(-1, "input", (b, *spec.input_shape))]
    shape = spec.input_shape
    for i, layer in enumerate(spec.layers):
        shape = layer_output_shape(layer, shape)
        tensors.append(alloc(i, "output", (b, *shape)))
        in_shapes.append(shape)

    grad_out = alloc(len(spec.layers) - 1, "gradient", (b, *shape)) if spec.layers else None
    for i in range(len(spec.layers) - 1, -1, -1):
        grad_in = alloc(i, "gradient", (b, *in_shapes[i]))
        free(grad_out)
        grad_out = grad_in
    if grad_out is not None:
        free(grad_out)
    for t in reversed(tensors):
        free(t)
    return ShapeTrace(tuple(events), b)


def _deltas(trace: ShapeTrace, elem_bytes: int, n_states: int) -> np.ndarray:
    out = np.empty(len(trace.events), dtype=np.int64)
    for k, e in enumerate(trace.events):
        if e.role == "optimizer_state" and e.slot >= n_states:
            out[k] = 0
        else:
            out[k] = e.numel * elem_bytes if e.alloc else -e.numel * elem_bytes
    return out


def peak_live_bytes(
    trace: ShapeTrace,
    elem_bytes: int = 4,
    optimizer: str = "Adam",
    margin_bytes: int = DEFAULT_MARGIN_BYTES,
) -> MemoryEstimate:
    """Maximum over trace positions of live tensor bytes, plus a fixed margin."""
    n_states = _optimizer_states(optimizer)
    peak = _kernels.peak_running_sum(_deltas(trace, elem_bytes, n_states))
    return MemoryEstimate("shapeprop", int(peak) + int(margin_bytes), int(margin_bytes), elem_bytes, optimizer)


# --------------------------------------------------------------------------- #
# error reporting

PERCENTILES = (50, 80, 90, 95, 99)


@dataclass(frozen=True)
class ErrorRecord:
    abs_error_gb: float
    signed_error_gb: float
    estimation_time_s: float

    def __post_init__(self) -> None:
        if self.estimation_time_s < 0 or not math.isclose(self.abs_error_gb, abs(self.signed_error_gb)):
            raise ValueError("need abs_error_gb == |signed_error_gb| and a non-negative time")

    @classmethod
    def from_bytes(cls, estimated: int, actual: int, seconds: float) -> "ErrorRecord":
        signed = (estimated - actual) / GiB
        return cls(abs(signed), signed, seconds)


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("percentile of an empty sequence")
    # multiply first: pct / 100 * n can land just above an integer
    rank = max(1, math.ceil(pct * len(ordered) / 100.0))
    return ordered[rank - 1]


@dataclass(frozen=True)
class ErrorReport:
    n: int
    abs_error_gb: dict
    estimation_time_s: dict
    threshold_gb: float
    exceed_fraction: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", *(f"p{p}" for p in PERCENTILES), "max"])
        for name, row in (("abs_error_gb", self.abs_error_gb), ("estimation_time_s", self.estimation_time_s)):
            w.writerow([name, *(repr(float(row[k])) for k in (*(f"p{p}" for p in PERCENTILES), "max"))])
        return buf.getvalue()

    def exceedance_line(self) -> str:
        return f"% of runs with >{self.threshold_gb:g} GB error: {100.0 * self.exceed_fraction:.2f}%"

    def to_table(self) -> str:
        """Fixed-width rendering; a max beyond the threshold prints as ``(> 8GB)``."""
        keys = [f"p{p}" for p in PERCENTILES] + ["max"]
        head = ["", *(k.upper() if k != "max" else "Max" for k in keys)]
        abs_cells = [f"{self.abs_error_gb[k]:.2f}" for k in keys]
        if self.abs_error_gb["max"] > self.threshold_gb:
            abs_cells[-1] = f"(> {self.threshold_gb:g}GB)"
        rows = [
            head,
            ["Absolute error (GB)", *abs_cells],
            ["Estimation time (s)", *(f"{self.estimation_time_s[k]:.2f}" for k in keys)],
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = [" | ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in rows]
        return "\n".join(lines + [self.exceedance_line()]) + "\n"


def error_report(records: Sequence[ErrorRecord], threshold_gb: float = 8.0) -> ErrorReport:
    if not records:
        raise ValueError("error_report needs at least one record")

    def table(values: list[float]) -> dict:
        out = {f"p{p}": nearest_rank(values, p) for p in PERCENTILES}
        out["max"] = max(values)
        return out

    errs = [r.abs_error_gb for r in records]
    return ErrorReport(
        n=len(records),
        abs_error_gb=table(errs),
        estimation_time_s=table([r.estimation_time_s for r in records]),
        threshold_gb=threshold_gb,
        exceed_fraction=sum(e > threshold_gb for e in errs) / len(records),
    )
