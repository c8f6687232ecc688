import numpy as np
import pytest

from oracles import SMALL_CONFIGS, brute_force
from trainmem.accounting import (
    LayerRecord,
    ModelSummary,
    emit_summary,
    layer_accounting,
    parse_summary,
    summarize,
)
from trainmem.archspec import (
    ArchSpec,
    GenerationConfig,
    activation,
    batchnorm2d,
    conv2d,
    custom_op,
    dropout,
    embedding,
    linear,
    sample_spec,
    sample_specs,
)
from trainmem.errors import IntegrityError, ParseError, UnsupportedOp


def small_mlp(*extra, batch=32):
    return ArchSpec("MLP", batch, (4,), 1, (linear(4, 8), activation("ReLU"), *extra, linear(8, 1)))


class TestLayerAccounting:
    def test_linear(self):
        rec = layer_accounting(linear(4, 1), (4,))
        assert (rec.trainable_params, rec.output_shape, rec.activations) == (5, (1,), 1)

    def test_conv(self):
        rec = layer_accounting(conv2d(3, 16, 3, 1, 1), (3, 32, 32))
        assert (rec.trainable_params, rec.output_shape, rec.activations) == (448, (16, 32, 32), 16384)

    def test_embedding(self):
        rec = layer_accounting(embedding(50000, 128), (128,))
        assert (rec.trainable_params, rec.output_shape, rec.activations) == (6_400_000, (128, 128), 16384)

    def test_batchnorm2d(self):
        assert layer_accounting(batchnorm2d(16), (16, 4, 4)).trainable_params == 32

    def test_custom_op_unsupported(self):
        with pytest.raises(UnsupportedOp):
            layer_accounting(custom_op("x"), (4,))


class TestSummarize:
    def test_three_layer_mlp(self):
        s = summarize(small_mlp())
        assert (s.total_params, s.total_activations) == (49, 17)
        assert s.layer_type_counts == {"ActivationFn": 1, "Linear": 2}

    def test_dropout_adds_no_params(self):
        base, with_drop = summarize(small_mlp()), summarize(small_mlp(dropout(0.2)))
        assert with_drop.total_params == base.total_params
        assert with_drop.count("Dropout") == base.count("Dropout") + 1

    def test_table_range_mlps_have_plausible_sizes(self):
        for spec in sample_specs(GenerationConfig.for_family("MLP"), 200, seed=11):
            assert 27 <= summarize(spec).total_params <= 159_856_482

    def test_adding_layers_is_monotone(self):
        spec = sample_spec(SMALL_CONFIGS["MLP"], 0, 0)
        prev = (0, 0)
        for n in range(1, len(spec.layers) + 1):
            prefix = ArchSpec(spec.family, spec.batch_size, spec.input_shape, 1, spec.layers[:n])
            s = summarize(prefix)
            assert s.total_params >= prev[0] and s.total_activations >= prev[1]
            prev = (s.total_params, s.total_activations)


@pytest.mark.parametrize("family", ["MLP", "CNN", "Transformer"])
def test_matches_brute_force_oracle(family):
    for i in range(60):
        spec = sample_spec(SMALL_CONFIGS[family], i, 123)
        got = [(r.trainable_params, r.output_shape, r.activations) for r in summarize(spec).records]
        assert got == brute_force(spec, np.random.default_rng(i))


def _torch_module(layer):
    nn = pytest.importorskip("torch.nn")
    k, p = layer.kind, layer.params
    if k == "Linear":
        return nn.Linear(p["in_features"], p["out_features"], bias=p.get("bias", True))
    if k == "Conv2d":
        return nn.Conv2d(p["in_channels"], p["out_channels"], p["kernel_size"], p["stride"], p["padding"])
    if k == "Pool2d":
        return nn.MaxPool2d(p["kernel_size"], p["stride"])
    if k == "BatchNorm1d":
        return nn.BatchNorm1d(p["num_features"])
    if k == "BatchNorm2d":
        return nn.BatchNorm2d(p["num_features"])
    if k == "LayerNorm":
        return nn.LayerNorm(p["dim"])
    if k == "Embedding":
        return nn.Embedding(p["vocab_size"], p["dim"])
    if k == "FeedForward":
        d, f = p["embed_dim"], p["ff_dim"]
        return nn.Sequential(nn.Linear(d, f), nn.ReLU(), nn.Linear(f, d))
    if k == "MultiHeadAttention":
        mha = nn.MultiheadAttention(p["embed_dim"], p["n_heads"], batch_first=True)

        class SelfAttention(nn.Module):
            def __init__(self):
                super().__init__()
                self.mha = mha

            def forward(self, x):
                return self.mha(x, x, x, need_weights=False)[0]

        return SelfAttention()
    if k == "Dropout":
        return nn.Dropout(p["rate"])
    if k == "Flatten":
        return nn.Flatten()
    return getattr(nn, p["fn"])()


@pytest.mark.parametrize("family", ["MLP", "CNN", "Transformer"])
def test_matches_torch_modules(family):
    torch = pytest.importorskip("torch")
    for i in range(10):
        spec = sample_spec(SMALL_CONFIGS[family], i, 99)
        if family == "Transformer":
            x = torch.zeros((2, *spec.input_shape), dtype=torch.long)
        else:
            x = torch.randn((2, *spec.input_shape))
        for layer, rec in zip(spec.layers, summarize(spec).records):
            mod = _torch_module(layer).eval()
            with torch.no_grad():
                x = mod(x)
            assert sum(t.numel() for t in mod.parameters()) == rec.trainable_params
            assert tuple(x.shape[1:]) == rec.output_shape


class TestTextFormat:
    def test_emit_layout(self):
        text = emit_summary(summarize(small_mlp()))
        lines = text.splitlines()
        assert lines[0].startswith("Layer (type)") and "Output Shape" in lines[0] and lines[0].endswith("Param #")
        assert lines[2].startswith("Linear-1") and "[-1, 8]" in lines[2] and lines[2].endswith("40")
        assert lines[3].startswith("ReLU-2")
        assert "Total params: 49" in text and "Total activations: 17" in text and "Batch size: 32" in text

    def test_single_layer(self):
        spec = ArchSpec("MLP", 1, (4,), 1, (linear(4, 1),))
        lines = emit_summary(summarize(spec)).splitlines()
        body = [l for l in lines if l.startswith("Linear-")]
        assert len(body) == 1 and any(l.startswith("Total params: 5") for l in lines)

    def test_round_trip(self):
        s = summarize(small_mlp())
        assert parse_summary(emit_summary(s)) == s

    def test_thousands_separators(self):
        text = emit_summary(summarize(ArchSpec("Transformer", 1, (128,), 128, (embedding(50000, 128),), "GELU", "standard", 50000)))
        assert "6,400,000" in text and "Total params: 6,400,000" in text

    def test_tampered_totals(self):
        text = emit_summary(summarize(small_mlp())).replace("Total params: 49", "Total params: 50")
        with pytest.raises(IntegrityError):
            parse_summary(text)

    def test_unknown_kind_names_line(self):
        text = emit_summary(summarize(small_mlp())).replace("Linear-1", "Wibble-1")
        with pytest.raises(ParseError, match="line 3"):
            parse_summary(text)

    @pytest.mark.parametrize("bad", ["", "garbage\n", "Layer (type) | Output Shape | Param #\n"])
    def test_malformed(self, bad):
        with pytest.raises(ParseError):
            parse_summary(bad)

    def test_activation_rows_keep_function(self):
        spec = ArchSpec("MLP", 2, (4,), 4, (linear(4, 4), activation("LeakyReLU")), "LeakyReLU")
        s = parse_summary(emit_summary(summarize(spec)))
        assert s.records[1].fn == "LeakyReLU"


def test_records_validate_invariants():
    with pytest.raises(ValueError):
        LayerRecord(0, "Linear", (2, 3), 1, 5)
    with pytest.raises(ValueError):
        LayerRecord(0, "Linear", (0,), 1, 0)
    s = ModelSummary.from_records([LayerRecord(0, "Linear", (3,), 12, 3)], 4)
    assert s.total_params == 12 and s.layer_type_counts == {"Linear": 1}
