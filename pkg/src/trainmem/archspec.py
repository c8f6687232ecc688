"""Architecture specifications, validity rules, width schedules and the
YAML-driven random sampler for synthetic training configurations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import yaml

from .errors import ConfigError, GenerationError, ShapeError

FAMILIES = ("MLP", "CNN", "Transformer")
ACTIVATIONS = ("ReLU", "ELU", "Tanh", "Sigmoid", "GELU", "LeakyReLU")
WIDTH_TOPOLOGIES = ("pyramid", "uniform", "bottleneck", "gradual", "hourglass")
TRANSFORMER_TOPOLOGIES = ("standard", "decoder_only", "hybrid")
TOPOLOGIES = WIDTH_TOPOLOGIES + TRANSFORMER_TOPOLOGIES

LAYER_KINDS = (
    "Linear",
    "Conv2d",
    "BatchNorm1d",
    "BatchNorm2d",
    "Dropout",
    "LayerNorm",
    "Embedding",
    "MultiHeadAttention",
    "FeedForward",
    "Flatten",
    "Pool2d",
    "ActivationFn",
    "CustomOp",
)

FAMILY_KINDS = {
    "MLP": {"Linear", "BatchNorm1d", "Dropout", "ActivationFn", "CustomOp"},
    "CNN": {
        "Conv2d",
        "BatchNorm2d",
        "Dropout",
        "ActivationFn",
        "Pool2d",
        "Flatten",
        "Linear",
        "CustomOp",
    },
    "Transformer": {
        "Embedding",
        "MultiHeadAttention",
        "FeedForward",
        "LayerNorm",
        "Dropout",
        "Linear",
        "ActivationFn",
        "CustomOp",
    },
}

# retry budget per spec for rejection sampling
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.params[key]

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        kind = d.pop("kind")
        if kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {kind!r}")
        return cls(kind, d)


def linear(in_features: int, out_features: int, bias: bool = True) -> LayerSpec:
    return LayerSpec("Linear", {"in_features": in_features, "out_features": out_features, "bias": bias})


def conv2d(in_channels: int, out_channels: int, kernel_size: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    return LayerSpec(
        "Conv2d",
        {
            "in_channels": in_channels,
            "out_channels": out_channels,
            "kernel_size": kernel_size,
            "stride": stride,
            "padding": padding,
        },
    )


def batchnorm1d(num_features: int) -> LayerSpec:
    return LayerSpec("BatchNorm1d", {"num_features": num_features})


def batchnorm2d(num_features: int) -> LayerSpec:
    return LayerSpec("BatchNorm2d", {"num_features": num_features})


def dropout(rate: float) -> LayerSpec:
    return LayerSpec("Dropout", {"rate": rate})


def layernorm(dim: int) -> LayerSpec:
    return LayerSpec("LayerNorm", {"dim": dim})


def embedding(vocab_size: int, dim: int) -> LayerSpec:
    return LayerSpec("Embedding", {"vocab_size": vocab_size, "dim": dim})


def attention(embed_dim: int, n_heads: int) -> LayerSpec:
    return LayerSpec("MultiHeadAttention", {"embed_dim": embed_dim, "n_heads": n_heads})


def feedforward(embed_dim: int, ff_dim: int) -> LayerSpec:
    return LayerSpec("FeedForward", {"embed_dim": embed_dim, "ff_dim": ff_dim})


def flatten() -> LayerSpec:
    return LayerSpec("Flatten")


def pool2d(kernel_size: int = 2, stride: int = 2) -> LayerSpec:
    return LayerSpec("Pool2d", {"kernel_size": kernel_size, "stride": stride})


def activation(fn: str) -> LayerSpec:
    return LayerSpec("ActivationFn", {"fn": fn})


def custom_op(name: str = "custom") -> LayerSpec:
    return LayerSpec("CustomOp", {"name": name})


@dataclass(frozen=True)
class ArchSpec:
    """One training configuration.

    ``input_shape`` is per sample: ``[features]`` for MLPs,
    ``[channels, height, width]`` for CNNs and ``[sequence_length]`` for
    Transformers, whose token vocabulary is ``vocab_size``.
    """

    family: str
    batch_size: int
    input_shape: tuple[int, ...]
    output_size: int
    layers: tuple[LayerSpec, ...]
    activation_fn: str = "ReLU"
    topology: str = "uniform"
    vocab_size: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "batch_size": self.batch_size,
            "input_shape": list(self.input_shape),
            "output_size": self.output_size,
            "activation_fn": self.activation_fn,
            "topology": self.topology,
            "vocab_size": self.vocab_size,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    def to_json(self) -> str:
        """Canonical JSON: sorted keys, no insignificant whitespace."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            family=d["family"],
            batch_size=int(d["batch_size"]),
            input_shape=tuple(d["input_shape"]),
            output_size=int(d["output_size"]),
            layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
            activation_fn=d.get("activation_fn", "ReLU"),
            topology=d.get("topology", "uniform"),
            vocab_size=d.get("vocab_size"),
        )

    @classmethod
    def from_json(cls, text: str) -> "ArchSpec":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------- #
# shape rules


def _check_positive(layer: LayerSpec, *names: str) -> None:
    for name in names:
        value = layer.params.get(name)
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
            raise ShapeError(f"{layer.kind}.{name} must be a positive integer, got {value!r}")


def conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def layer_output_shape(layer: LayerSpec, shape: Sequence[int]) -> tuple[int, ...]:
    """Per-sample output shape of ``layer`` applied to ``shape``.

    Raises ShapeError when the layer cannot consume ``shape``.
    """
    shape = tuple(shape)
    kind = layer.kind
    if kind == "Linear":
        _check_positive(layer, "in_features", "out_features")
        if not shape or shape[-1] != layer["in_features"]:
            raise ShapeError(f"shape mismatch: Linear expects last dim {layer['in_features']}, got {list(shape)}")
        return shape[:-1] + (layer["out_features"],)
    if kind in ("Conv2d", "Pool2d"):
        if kind == "Conv2d":
            _check_positive(layer, "in_channels", "out_channels", "kernel_size", "stride")
        else:
            _check_positive(layer, "kernel_size", "stride")
        pad = layer.params.get("padding", 0)
        if not isinstance(pad, (int, np.integer)) or pad < 0:
            raise ShapeError(f"{kind}.padding must be a non-negative integer")
        if len(shape) != 3:
            raise ShapeError(f"shape mismatch: {kind} expects [C, H, W], got {list(shape)}")
        c, h, w = shape
        if kind == "Conv2d" and c != layer["in_channels"]:
            raise ShapeError(f"shape mismatch: Conv2d expects {layer['in_channels']} channels, got {c}")
        k, s = layer["kernel_size"], layer["stride"]
        ho, wo = conv_out(h, k, s, pad), conv_out(w, k, s, pad)
        if ho < 1 or wo < 1:
            raise ShapeError(f"non-positive output spatial size {ho}x{wo} from {h}x{w} (k={k}, s={s}, p={pad})")
        return (layer["out_channels"] if kind == "Conv2d" else c, ho, wo)
    if kind in ("BatchNorm1d", "BatchNorm2d"):
        _check_positive(layer, "num_features")
        rank = 1 if kind == "BatchNorm1d" else 3
        if len(shape) != rank or shape[0] != layer["num_features"]:
            raise ShapeError(f"shape mismatch: {kind}({layer['num_features']}) cannot take {list(shape)}")
        return shape
    if kind == "LayerNorm":
        _check_positive(layer, "dim")
        if not shape or shape[-1] != layer["dim"]:
            raise ShapeError(f"shape mismatch: LayerNorm({layer['dim']}) cannot take {list(shape)}")
        return shape
    if kind == "Embedding":
        _check_positive(layer, "vocab_size", "dim")
        if len(shape) != 1:
            raise ShapeError(f"shape mismatch: Embedding expects token ids [seq], got {list(shape)}")
        return shape + (layer["dim"],)
    if kind in ("MultiHeadAttention", "FeedForward"):
        _check_positive(layer, "embed_dim", "n_heads" if kind == "MultiHeadAttention" else "ff_dim")
        if kind == "MultiHeadAttention" and layer["embed_dim"] % layer["n_heads"]:
            raise ShapeError(f"n_heads {layer['n_heads']} does not divide embed_dim {layer['embed_dim']}")
        if len(shape) != 2 or shape[-1] != layer["embed_dim"]:
            raise ShapeError(f"shape mismatch: {kind}({layer['embed_dim']}) cannot take {list(shape)}")
        return shape
    if kind == "Dropout":
        rate = layer.params.get("rate")
        if not isinstance(rate, (int, float)) or not 0.0 <= rate < 1.0:
            raise ShapeError(f"Dropout rate must lie in [0, 1), got {rate!r}")
        return shape
    if kind == "ActivationFn":
        if layer.params.get("fn") not in ACTIVATIONS:
            raise ShapeError(f"unknown activation function {layer.params.get('fn')!r}")
        return shape
    if kind == "Flatten":
        return (math.prod(shape),)
    if kind == "CustomOp":
        return shape
    raise ShapeError(f"unknown layer kind {kind!r}")


# --------------------------------------------------------------------------- #
# validation


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(spec: ArchSpec) -> ValidationReport:
    """Check every ArchSpec invariant; violations are returned, never raised."""
    v: list[str] = []
    if spec.family not in FAMILIES:
        return ValidationReport((f"unknown family {spec.family!r}",))
    if not isinstance(spec.batch_size, (int, np.integer)) or spec.batch_size < 1:
        v.append(f"batch_size must be >= 1, got {spec.batch_size!r}")
    if spec.output_size < 1:
        v.append(f"output_size must be >= 1, got {spec.output_size}")
    if spec.activation_fn not in ACTIVATIONS:
        v.append(f"unknown activation function {spec.activation_fn!r}")
    if spec.topology not in TOPOLOGIES:
        v.append(f"unknown topology {spec.topology!r}")
    rank = {"MLP": 1, "CNN": 3, "Transformer": 1}[spec.family]
    if len(spec.input_shape) != rank or any(d < 1 for d in spec.input_shape):
        v.append(f"input_shape {list(spec.input_shape)} invalid for {spec.family}")
    if spec.family == "Transformer" and (spec.vocab_size is None or spec.vocab_size < 1):
        v.append("Transformer spec requires a positive vocab_size")
    if not spec.layers:
        v.append("no layers")
        return ValidationReport(tuple(v))

    allowed = FAMILY_KINDS[spec.family]
    for i, layer in enumerate(spec.layers):
        if layer.kind not in allowed:
            v.append(f"layer {i}: {layer.kind} not allowed in {spec.family} spec")
    if spec.family == "CNN":
        n_linear = sum(layer.kind == "Linear" for layer in spec.layers)
        if n_linear != 1:
            v.append(f"CNN spec must contain exactly one Linear layer, found {n_linear}")
    if spec.family == "Transformer" and spec.vocab_size is not None:
        for i, layer in enumerate(spec.layers):
            if layer.kind == "Embedding" and layer.params.get("vocab_size") != spec.vocab_size:
                v.append(f"layer {i}: Embedding vocab {layer.params.get('vocab_size')} != spec vocab {spec.vocab_size}")

    shape: tuple[int, ...] | None = spec.input_shape
    if len(spec.input_shape) == rank and all(d >= 1 for d in spec.input_shape):
        for i, layer in enumerate(spec.layers):
            try:
                shape = layer_output_shape(layer, shape)
            except ShapeError as exc:
                msg = str(exc)
                if msg.startswith("shape mismatch"):
                    msg = msg.replace("shape mismatch", f"shape mismatch at layer {i}", 1)
                elif msg.startswith("non-positive output spatial size"):
                    msg = msg.replace("non-positive output spatial size", f"non-positive output spatial size at layer {i}", 1)
                else:
                    msg = f"layer {i}: {msg}"
                v.append(msg)
                shape = None
                break
        if shape is not None and shape[-1] != spec.output_size:
            v.append(f"output size mismatch: final layer yields {shape[-1]}, expected {spec.output_size}")
    return ValidationReport(tuple(v))


# --------------------------------------------------------------------------- #
# width schedules


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_width_schedule(topology: str, depth: int, base_width: int, min_width: int) -> list[int]:
    """Widths of ``depth`` consecutive blocks for a named topology.

    pyramid    geometric decay base -> min
    uniform    constant base
    bottleneck base everywhere except the middle block (index depth // 2) at min
    gradual    linear interpolation base -> min
    hourglass  linear decay to min at the middle, mirrored back up to base
    """
    if depth < 1 or not base_width >= min_width >= 1:
        raise ValueError(f"need depth >= 1 and base_width >= min_width >= 1, got {depth}, {base_width}, {min_width}")
    if topology == "uniform":
        return [base_width] * depth
    if topology == "gradual":
        if depth == 1:
            return [base_width]
        step = (min_width - base_width) / (depth - 1)
        return [_round_half_up(base_width + step * i) for i in range(depth)]
    if topology == "pyramid":
        if depth == 1:
            return [base_width]
        ratio = min_width / base_width
        out = [_round_half_up(base_width * ratio ** (i / (depth - 1))) for i in range(depth)]
        return [min(base_width, max(min_width, w)) for w in out]
    if topology == "bottleneck":
        out = [base_width] * depth
        out[depth // 2] = min_width
        return out
    if topology == "hourglass":
        half = (depth + 1) // 2
        if half == 1:
            left = [min_width]
        else:
            step = (min_width - base_width) / (half - 1)
            left = [_round_half_up(base_width + step * i) for i in range(half)]
        return left + left[: depth - half][::-1]
    raise ValueError(f"unknown topology {topology!r}; expected one of {WIDTH_TOPOLOGIES}")


# --------------------------------------------------------------------------- #
# generation config


@dataclass(frozen=True)
class Range:
    min: float
    max: float

    def __post_init__(self) -> None:
        if self.min > self.max:
            raise ConfigError(f"range min {self.min} > max {self.max}")

    def contains(self, x: float) -> bool:
        return self.min <= x <= self.max


_DEFAULTS: dict[str, dict[str, Any]] = {
    "MLP": {
        "input_size": Range(4, 4096),
        "output_size": None,
        "output_min_ratio": 0.25,
        "batch_size": Range(1, 256),
        "depth": Range(1, 11),
        "width": Range(8, 4096),
        "activations": ACTIVATIONS,
        "topologies": ("pyramid", "uniform", "bottleneck", "gradual"),
    },
    "CNN": {
        "input_size": Range(32, 224),
        "output_size": Range(2, 22000),
        "output_min_ratio": None,
        "batch_size": Range(2, 62),
        "depth": Range(1, 29),
        "width": Range(16, 512),
        "activations": ACTIVATIONS,
        "topologies": WIDTH_TOPOLOGIES,
    },
    "Transformer": {
        "input_size": Range(128, 1024),
        "output_size": Range(400, 1000),
        "output_min_ratio": None,
        "batch_size": Range(1, 128),
        "depth": Range(1, 12),
        "width": Range(128, 2048),
        "activations": ("GELU",),
        "topologies": TRANSFORMER_TOPOLOGIES,
    },
}


@dataclass(frozen=True)
class GenerationConfig:
    """Sampling ranges for one architecture family.

    ``input_size`` is the feature count (MLP), the square image side (CNN)
    or the sequence length (Transformer).  ``depth`` counts hidden blocks:
    hidden Linear layers, Conv2d layers or encoder/decoder blocks.
    ``width`` bounds hidden widths, filter counts or the embedding size.
    """

    family: str = "MLP"
    base_data_dir: str = "dataset"
    num_random_configs: int = 100
    seed: int = 0
    input_size: Range = Range(4, 4096)
    output_size: Range | None = None
    output_min_ratio: float | None = 0.25
    batch_size: Range = Range(1, 256)
    depth: Range = Range(1, 11)
    width: Range = Range(8, 4096)
    dropout_prob: float = 0.5
    dropout_rate: Range = Range(0.1, 0.5)
    batchnorm_prob: float = 0.5
    activations: tuple[str, ...] = ACTIVATIONS
    topologies: tuple[str, ...] = ("pyramid", "uniform", "bottleneck", "gradual")
    channels: Range = Range(1, 3)
    kernel_sizes: tuple[int, ...] = (1, 2, 3)
    pool_prob: float = 0.5
    vocab_sizes: tuple[int, ...] = (50000, 1000000)
    n_heads: tuple[int, ...] = (1, 2, 4, 8)
    ff_multipliers: tuple[int, ...] = (2, 4)

    @classmethod
    def for_family(cls, family: str, **overrides: Any) -> "GenerationConfig":
        if family not in FAMILIES:
            raise ConfigError(f"unknown family {family!r}")
        return cls(family=family, **{**_DEFAULTS[family], **overrides}).checked()

    def checked(self) -> "GenerationConfig":
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.num_random_configs < 1:
            raise ConfigError("num_random_configs must be >= 1")
        if self.family == "MLP":
            if self.output_min_ratio is None or not 0.0 < self.output_min_ratio <= 1.0:
                raise ConfigError("MLP output_size.min_ratio must lie in (0, 1]")
        elif self.output_size is None:
            raise ConfigError(f"{self.family} config needs an output_size range")
        for name in ("input_size", "batch_size", "depth", "width", "channels"):
            if getattr(self, name).min < 1:
                raise ConfigError(f"{name}.min must be >= 1")
        for name in ("dropout_prob", "batchnorm_prob", "pool_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not (0.0 <= self.dropout_rate.min and self.dropout_rate.max < 1.0):
            raise ConfigError("dropout rate range must lie in [0, 1)")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")
        allowed = TRANSFORMER_TOPOLOGIES if self.family == "Transformer" else WIDTH_TOPOLOGIES
        for topo in self.topologies:
            if topo not in allowed:
                raise ConfigError(f"topology {topo!r} not available for {self.family}")
        if not self.activations or not self.topologies:
            raise ConfigError("activations and topologies must be nonempty")
        if not self.kernel_sizes or min(self.kernel_sizes) < 1:
            raise ConfigError("kernel_sizes must be positive")
        if not self.n_heads or min(self.n_heads) < 1 or not self.ff_multipliers or min(self.ff_multipliers) < 1:
            raise ConfigError("n_heads and ff_multipliers must be positive")
        if not self.vocab_sizes or min(self.vocab_sizes) < 1:
            raise ConfigError("vocab_sizes must be positive")
        return self


def _range(raw: Any, key: str, integral: bool = True) -> Range:
    if not isinstance(raw, dict) or "min" not in raw or "max" not in raw:
        raise ConfigError(f"missing range for {key!r}: expected a block with min and max")
    lo, hi = raw["min"], raw["max"]
    for x in (lo, hi):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or (integral and int(x) != x):
            raise ConfigError(f"{key}: range bounds must be {'integers' if integral else 'numbers'}, got {x!r}")
    if lo > hi:
        raise ConfigError(f"{key}: min {lo} > max {hi}")
    return Range(int(lo), int(hi)) if integral else Range(float(lo), float(hi))


def _number(raw: Any, key: str) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{key} must be a number, got {raw!r}")
    return float(raw)


def _seq(raw: Any, key: str) -> tuple:
    if not isinstance(raw, (list, tuple)) or not raw:
        raise ConfigError(f"{key} must be a nonempty list")
    return tuple(raw)


_TOP_KEYS = {
    "family", "base_data_dir", "num_random_configs", "seed", "input_size", "output_size",
    "batch_size", "depth", "width", "dropout", "batchnorm", "activations", "topologies",
    "channels", "kernel_sizes", "pool_prob", "vocab_sizes", "n_heads", "ff_multipliers",
}


def load_generation_config(text: str) -> GenerationConfig:
    """Parse a YAML generation config; missing optional keys take family defaults."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("malformed config: expected a key/value mapping at top level")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(map(str, unknown))}")

    family = raw.get("family", "MLP")
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    kw: dict[str, Any] = dict(_DEFAULTS[family])

    if "base_data_dir" in raw:
        kw["base_data_dir"] = str(raw["base_data_dir"])
    for key in ("num_random_configs", "seed"):
        if key in raw:
            value = raw[key]
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{key} must be an integer, got {value!r}")
            kw[key] = value
    for key in ("input_size", "batch_size", "depth", "width", "channels"):
        if key in raw:
            kw[key] = _range(raw[key], key)
    if "output_size" in raw:
        block = raw["output_size"]
        if isinstance(block, dict) and "min_ratio" in block:
            kw["output_min_ratio"] = _number(block["min_ratio"], "output_size.min_ratio")
            kw["output_size"] = None
        else:
            kw["output_size"] = _range(block, "output_size")
            kw["output_min_ratio"] = None
    if "dropout" in raw:
        block = raw["dropout"]
        if not isinstance(block, dict):
            raise ConfigError("dropout must be a block with prob / min_rate / max_rate")
        kw["dropout_prob"] = _number(block.get("prob", 0.5), "dropout.prob")
        kw["dropout_rate"] = _range(
            {"min": block.get("min_rate", 0.1), "max": block.get("max_rate", 0.5)}, "dropout rate", integral=False
        )
    if "batchnorm" in raw:
        block = raw["batchnorm"]
        if not isinstance(block, dict):
            raise ConfigError("batchnorm must be a block with prob")
        kw["batchnorm_prob"] = _number(block.get("prob", 0.5), "batchnorm.prob")
    if "pool_prob" in raw:
        kw["pool_prob"] = _number(raw["pool_prob"], "pool_prob")
    for key in ("activations", "topologies"):
        if key in raw:
            kw[key] = tuple(str(x) for x in _seq(raw[key], key))
    for key in ("kernel_sizes", "vocab_sizes", "n_heads", "ff_multipliers"):
        if key in raw:
            values = _seq(raw[key], key)
            if any(isinstance(x, bool) or not isinstance(x, int) for x in values):
                raise ConfigError(f"{key} must be a list of integers")
            kw[key] = tuple(values)
    return GenerationConfig(family=family, **kw).checked()


def dump_generation_config(config: GenerationConfig) -> str:
    """Inverse of load_generation_config (YAML text)."""
    d: dict[str, Any] = {
        "family": config.family,
        "base_data_dir": config.base_data_dir,
        "num_random_configs": config.num_random_configs,
        "seed": config.seed,
    }
    for key in ("input_size", "batch_size", "depth", "width", "channels"):
        r = getattr(config, key)
        d[key] = {"min": r.min, "max": r.max}
    if config.output_min_ratio is not None:
        d["output_size"] = {"min_ratio": config.output_min_ratio}
    else:
        d["output_size"] = {"min": config.output_size.min, "max": config.output_size.max}
    d["dropout"] = {"prob": config.dropout_prob, "min_rate": config.dropout_rate.min, "max_rate": config.dropout_rate.max}
    d["batchnorm"] = {"prob": config.batchnorm_prob}
    d["pool_prob"] = config.pool_prob
    for key in ("activations", "topologies", "kernel_sizes", "vocab_sizes", "n_heads", "ff_multipliers"):
        d[key] = list(getattr(config, key))
    return yaml.safe_dump(d, sort_keys=False)


# --------------------------------------------------------------------------- #
# sampling


def _randint(rng: np.random.Generator, r: Range) -> int:
    return int(rng.integers(int(r.min), int(r.max) + 1))


def _choice(rng: np.random.Generator, options: Sequence) -> Any:
    return options[int(rng.integers(len(options)))]


def _widths(rng: np.random.Generator, config: GenerationConfig, topology: str, depth: int) -> list[int]:
    base = _randint(rng, config.width)
    narrow = _randint(rng, Range(config.width.min, base))
    return build_width_schedule(topology, depth, base, narrow)


def _dropout_rate(rng: np.random.Generator, config: GenerationConfig) -> float:
    # rounded so the canonical JSON stays short and exact
    return round(float(rng.uniform(config.dropout_rate.min, config.dropout_rate.max)), 4)


def _sample_mlp(rng: np.random.Generator, config: GenerationConfig) -> ArchSpec:
    n_in = _randint(rng, config.input_size)
    n_out = _randint(rng, Range(max(1, math.ceil(config.output_min_ratio * n_in)), n_in))
    batch = _randint(rng, config.batch_size)
    depth = _randint(rng, config.depth)
    topology = _choice(rng, config.topologies)
    act = _choice(rng, config.activations)
    layers: list[LayerSpec] = []
    prev = n_in
    for w in _widths(rng, config, topology, depth):
        layers.append(linear(prev, w))
        if rng.random() < config.batchnorm_prob:
            layers.append(batchnorm1d(w))
        layers.append(activation(act))
        if rng.random() < config.dropout_prob:
            layers.append(dropout(_dropout_rate(rng, config)))
        prev = w
    layers.append(linear(prev, n_out))
    return ArchSpec("MLP", batch, (n_in,), n_out, tuple(layers), act, topology)


def _sample_cnn(rng: np.random.Generator, config: GenerationConfig) -> ArchSpec:
    channels = _randint(rng, config.channels)
    side = _randint(rng, config.input_size)
    n_out = _randint(rng, config.output_size)
    batch = _randint(rng, config.batch_size)
    depth = _randint(rng, config.depth)
    topology = _choice(rng, config.topologies)
    act = _choice(rng, config.activations)
    layers: list[LayerSpec] = []
    c, h = channels, side
    for w in _widths(rng, config, topology, depth):
        k = int(_choice(rng, config.kernel_sizes))
        pad = k // 2 if k % 2 else 0
        layers.append(conv2d(c, w, k, 1, pad))
        h = conv_out(h, k, 1, pad)
        if rng.random() < config.batchnorm_prob:
            layers.append(batchnorm2d(w))
        layers.append(activation(act))
        if h >= 4 and rng.random() < config.pool_prob:
            layers.append(pool2d(2, 2))
            h = conv_out(h, 2, 2, 0)
        if rng.random() < config.dropout_prob:
            layers.append(dropout(_dropout_rate(rng, config)))
        c = w
    # shrink to at most 7x7 before the classifier head
    while h > 7:
        layers.append(pool2d(2, 2))
        h = conv_out(h, 2, 2, 0)
    layers.append(flatten())
    layers.append(linear(c * max(h, 0) * max(h, 0), n_out))
    return ArchSpec("CNN", batch, (channels, side, side), n_out, tuple(layers), act, topology)


def _encoder_block(d: int, heads: int, ff: int, p: float) -> list[LayerSpec]:
    return [attention(d, heads), dropout(p), layernorm(d), feedforward(d, ff), dropout(p), layernorm(d)]


def _decoder_block(d: int, heads: int, ff: int, p: float) -> list[LayerSpec]:
    return [layernorm(d), attention(d, heads), dropout(p), layernorm(d), feedforward(d, ff), dropout(p)]


def _sample_transformer(rng: np.random.Generator, config: GenerationConfig) -> ArchSpec:
    seq = _randint(rng, config.input_size)
    vocab = int(_choice(rng, config.vocab_sizes))
    n_out = _randint(rng, config.output_size)
    batch = _randint(rng, config.batch_size)
    depth = _randint(rng, config.depth)
    topology = _choice(rng, config.topologies)
    act = _choice(rng, config.activations)
    heads = int(_choice(rng, config.n_heads))
    lo, hi = math.ceil(config.width.min / heads), int(config.width.max) // heads
    # an empty multiple range yields an invalid embed size, rejected below
    d = heads * int(rng.integers(lo, hi + 1)) if lo <= hi else 0
    ff = d * int(_choice(rng, config.ff_multipliers))
    p = _dropout_rate(rng, config)
    layers: list[LayerSpec] = [embedding(vocab, d), dropout(p)]
    if topology == "standard":
        n_enc, n_dec = depth, 0
    elif topology == "decoder_only":
        n_enc, n_dec = 0, depth
    else:
        n_enc = (depth + 1) // 2
        n_dec = depth - n_enc
    for _ in range(n_enc):
        layers += _encoder_block(d, heads, ff, p)
    for _ in range(n_dec):
        layers += _decoder_block(d, heads, ff, p)
    if n_dec:
        layers.append(layernorm(d))
    layers.append(linear(d, n_out))
    return ArchSpec("Transformer", batch, (seq,), n_out, tuple(layers), act, topology, vocab)


_SAMPLERS = {"MLP": _sample_mlp, "CNN": _sample_cnn, "Transformer": _sample_transformer}


def sample_spec(config: GenerationConfig, index: int, seed: int) -> ArchSpec:
    """The ``index``-th spec of the stream for ``seed``; independent of other indices."""
    rng = np.random.default_rng([int(seed), int(index)])
    sampler = _SAMPLERS[config.family]
    last: tuple[str, ...] = ()
    for _ in range(MAX_ATTEMPTS):
        try:
            spec = sampler(rng, config)
        except ShapeError as exc:
            last = (str(exc),)
            continue
        report = validate(spec)
        if report.ok:
            return spec
        last = report.violations
    raise GenerationError(
        f"no valid {config.family} spec after {MAX_ATTEMPTS} attempts (index {index}); "
        f"last violation: {last[0] if last else 'unknown'}"
    )


def sample_specs(config: GenerationConfig, n: int | None = None, seed: int | None = None) -> list[ArchSpec]:
    """Draw ``n`` valid specs; a pure function of ``(config, n, seed)``."""
    n = config.num_random_configs if n is None else n
    seed = config.seed if seed is None else seed
    if n < 1:
        raise ValueError("n must be >= 1")
    return [sample_spec(config, i, seed) for i in range(n)]


def with_batch_size(spec: ArchSpec, batch_size: int) -> ArchSpec:
    return replace(spec, batch_size=batch_size)

