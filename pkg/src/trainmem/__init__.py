"""GPU memory and utilization estimation for deep-learning training configurations."""

from .accounting import LayerRecord, ModelSummary, emit_summary, layer_accounting, parse_summary, summarize
from .archspec import (
    ArchSpec,
    GenerationConfig,
    LayerSpec,
    build_width_schedule,
    load_generation_config,
    sample_specs,
    validate,
)
from .estimators import MemoryEstimate, analytic_estimate, error_report, peak_live_bytes, propagate_shapes

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "GenerationConfig",
    "LayerRecord",
    "LayerSpec",
    "MemoryEstimate",
    "ModelSummary",
    "analytic_estimate",
    "build_width_schedule",
    "emit_summary",
    "error_report",
    "layer_accounting",
    "load_generation_config",
    "parse_summary",
    "peak_live_bytes",
    "propagate_shapes",
    "sample_specs",
    "summarize",
    "validate",
]
