import math
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import SMALL_CONFIGS, replay_peak, sorted_nearest_rank
from trainmem.accounting import ModelSummary, LayerRecord, summarize
from trainmem.archspec import ArchSpec, activation, conv2d, custom_op, linear, sample_spec, with_batch_size
from trainmem.errors import UnsupportedOp
from trainmem.estimators import (
    GiB,
    MiB,
    OPTIMIZER_STATES,
    ErrorRecord,
    MemoryEstimate,
    analytic_estimate,
    error_report,
    nearest_rank,
    peak_live_bytes,
    propagate_shapes,
)


def totals(p, a, b):
    return ModelSummary((), p, a, b, {})


MLP3 = ArchSpec("MLP", 32, (4,), 2, (linear(4, 8), activation("ReLU"), linear(8, 2)))


class TestAnalytic:
    def test_reference_value(self):
        est = analytic_estimate(totals(10**6, 10**4, 32), "Adam", 4, 600 * MiB)
        assert est.estimated_bytes == 600 * MiB + 18_560_000
        assert est.estimated_mb == pytest.approx(617.70, abs=0.005)

    def test_minimal(self):
        assert analytic_estimate(totals(1, 1, 1), "SGD", 4, 0).estimated_bytes == 16

    def test_rejects_zero_totals(self):
        with pytest.raises(ValueError):
            analytic_estimate(totals(0, 1, 1))

    def test_linear_in_batch(self):
        s1 = summarize(MLP3)
        s2 = summarize(with_batch_size(MLP3, 64))
        e1 = analytic_estimate(s1, "Adam", 4, 0).estimated_bytes
        e2 = analytic_estimate(s2, "Adam", 4, 0).estimated_bytes
        param_term = 4 * 4 * s1.total_params
        assert e2 - param_term == 2 * (e1 - param_term)

    @settings(max_examples=300, deadline=None)
    @given(
        st.integers(1, 10**9),
        st.integers(1, 10**7),
        st.integers(1, 1024),
        st.sampled_from([2, 4, 8]),
        st.integers(0, 2**32),
    )
    def test_monotone(self, p, a, b, elem, overhead):
        base = analytic_estimate(totals(p, a, b), "SGD", elem, overhead).estimated_bytes
        for bumped in (totals(p + 1, a, b), totals(p, a + 1, b), totals(p, a, b + 1)):
            assert analytic_estimate(bumped, "SGD", elem, overhead).estimated_bytes >= base
        assert analytic_estimate(totals(p, a, b), "SGD", elem * 2, overhead).estimated_bytes >= base
        assert analytic_estimate(totals(p, a, b), "SGD", elem, overhead + 1).estimated_bytes >= base
        by_opt = [analytic_estimate(totals(p, a, b), o, elem, overhead).estimated_bytes for o in ("SGD", "SGDMomentum", "Adam")]
        assert by_opt == sorted(by_opt)

    def test_report_keys(self):
        rep = analytic_estimate(totals(10, 10, 1)).report(1.5)
        assert set(rep) == {"method", "estimated_mb", "margin_mb", "bin", "elapsed_ms"}
        assert rep["margin_mb"] == 600.0

    def test_estimate_invariant(self):
        with pytest.raises(ValueError):
            MemoryEstimate("analytic", 1, 2)


class TestShapeProp:
    def test_mlp_output_shapes(self):
        assert propagate_shapes(MLP3).outputs() == [(32, 8), (32, 8), (32, 2)]

    def test_conv_output_shape(self):
        spec = ArchSpec("CNN", 4, (3, 32, 32), 10, (conv2d(3, 16, 3, 2, 1),))
        assert propagate_shapes(spec).outputs()[0] == (4, 16, 16, 16)

    def test_custom_op(self):
        spec = ArchSpec("MLP", 1, (4,), 2, (linear(4, 4), custom_op("warp"), linear(4, 2)))
        with pytest.raises(UnsupportedOp):
            propagate_shapes(spec)

    @pytest.mark.parametrize("family", ["MLP", "CNN", "Transformer"])
    def test_outputs_match_accounting(self, family):
        for i in range(25):
            spec = sample_spec(SMALL_CONFIGS[family], i, 4)
            trace = propagate_shapes(spec)
            trace.check()
            assert trace.outputs() == [(spec.batch_size, *r.output_shape) for r in summarize(spec).records]

    def test_forward_tensors_retained_until_backward_done(self):
        trace = propagate_shapes(MLP3)
        events = trace.events
        first_output_free = min(k for k, e in enumerate(events) if not e.alloc and e.role in ("input", "output"))
        last_grad_alloc = max(k for k, e in enumerate(events) if e.alloc and e.role == "gradient")
        assert first_output_free > last_grad_alloc
        params_done = max(k for k, e in enumerate(events) if e.alloc and e.role in ("weight", "optimizer_state"))
        first_act = min(k for k, e in enumerate(events) if e.role == "input")
        assert params_done < first_act


class TestPeak:
    def test_hand_computed(self):
        # Linear(2->3), batch 1: 9 params, each held as weight + grad + 2 states
        spec = ArchSpec("MLP", 1, (2,), 3, (linear(2, 3),))
        trace = propagate_shapes(spec)
        # live at peak: 36 param-side + input 2 + output 3 + dL/dout 3 + dL/din 2
        assert peak_live_bytes(trace, 4, "Adam", 0).estimated_bytes == 4 * 46
        assert peak_live_bytes(trace, 4, "SGD", 0).estimated_bytes == 4 * 28

    def test_margin_is_additive(self):
        trace = propagate_shapes(MLP3)
        base = peak_live_bytes(trace, 4, "SGD", 0).estimated_bytes
        assert base == replay_peak(trace.events, 4, 0)
        assert peak_live_bytes(trace, 4, "SGD", 4 * GiB).estimated_bytes == base + 4 * 2**30

    def test_input_only(self):
        spec = ArchSpec("MLP", 3, (5,), 5, ())
        trace = propagate_shapes(spec)
        assert peak_live_bytes(trace, 4, "Adam", 7).estimated_bytes == 3 * 5 * 4 + 7

    @pytest.mark.parametrize("optimizer", list(OPTIMIZER_STATES))
    def test_at_least_param_side(self, optimizer):
        o = OPTIMIZER_STATES[optimizer]
        for i in range(30):
            spec = sample_spec(SMALL_CONFIGS["CNN"], i, 8)
            p = summarize(spec).total_params
            assert peak_live_bytes(propagate_shapes(spec), 4, optimizer, 0).estimated_bytes >= 4 * p * (2 + o)


class TestErrorReport:
    def test_single(self):
        rep = error_report([ErrorRecord(1.16, 1.16, 0.2)])
        assert rep.abs_error_gb["p50"] == 1.16 and rep.abs_error_gb["max"] == 1.16

    def test_zeros(self):
        rep = error_report([ErrorRecord(0.0, 0.0, 0.0)] * 9)
        assert set(rep.abs_error_gb.values()) == {0.0}

    def test_one_to_hundred(self):
        rep = error_report([ErrorRecord(float(v), -float(v), 1.0) for v in range(1, 101)])
        assert 50 <= rep.abs_error_gb["p50"] <= 51
        assert rep.abs_error_gb["p99"] == 99.0
        assert rep.exceed_fraction == pytest.approx(92 / 100)
        assert rep.exceedance_line() == "% of runs with >8 GB error: 92.00%"
        assert "(> 8GB)" in rep.to_table()

    def test_csv(self):
        rep = error_report([ErrorRecord(float(v), float(v), 0.5) for v in range(1, 11)])
        lines = rep.to_csv().splitlines()
        assert lines[0] == "metric,p50,p80,p90,p95,p99,max"
        assert lines[1].split(",")[0] == "abs_error_gb" and lines[2].split(",")[0] == "estimation_time_s"
        assert [float(x) for x in lines[1].split(",")[1:]] == [5.0, 8.0, 9.0, 10.0, 10.0, 10.0]

    def test_empty(self):
        with pytest.raises(ValueError):
            error_report([])

    def test_record_invariants(self):
        with pytest.raises(ValueError):
            ErrorRecord(1.0, 2.0, 0.0)
        r = ErrorRecord.from_bytes(3 * GiB, 5 * GiB, 0.1)
        assert (r.abs_error_gb, r.signed_error_gb) == (2.0, -2.0)

    @settings(max_examples=500, deadline=None)
    @given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=300), st.integers(1, 100))
    def test_nearest_rank_oracle(self, values, pct):
        assert nearest_rank(values, pct) == sorted_nearest_rank(values, pct)


def test_exceedance_format():
    rep = error_report([ErrorRecord(9.0, 9.0, 0.0), ErrorRecord(1.0, 1.0, 0.0), ErrorRecord(2.0, 2.0, 0.0)])
    assert re.fullmatch(r"% of runs with >8 GB error: \d+\.\d{2}%", rep.exceedance_line())
    assert rep.exceedance_line().endswith("33.33%")
    assert math.isclose(rep.exceed_fraction, 1 / 3)
