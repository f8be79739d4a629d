import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stformer_sci.complexity import (
    REFERENCE,
    count_macs_attention,
    flops_gmsa,
    flops_slw,
    flops_st,
    flops_tw,
    measure_network_macs,
    measure_slw,
    measure_tw,
    network_macs,
    preset_report,
)
from stformer_sci.model import ModelConfig

dim = st.integers(1, 64)


class TestFormulas:
    def test_hand_values(self):
        assert flops_slw(2, 2, 1, 1, 1, 1) == 24
        assert flops_tw(1, 1, 1, 1) == 3
        # 6*4 + 2*4 + 4: slw at these dims (24) plus tw at the same dims (12)
        assert flops_st(2, 2, 1, 1, 1, 1) == 36
        assert flops_gmsa(1, 1, 1, 1) == 6

    def test_linear_in_hw(self):
        assert flops_slw(28, 14, 8, 64) == 2 * flops_slw(14, 14, 8, 64)
        assert flops_tw(28, 14, 8, 64) == 2 * flops_tw(14, 14, 8, 64)
        assert flops_st(14, 28, 8, 64) == 2 * flops_st(14, 14, 8, 64)

    def test_gmsa_quadratic_in_hw(self):
        first = 4 * 16 * 16 * 8 * 64**2
        assert flops_gmsa(32, 16, 8, 64) - 2 * first == 4 * (flops_gmsa(16, 16, 8, 64) - first)

    def test_c_scaling(self):
        first = lambda c: flops_slw(4, 4, 2, c, 2, 2) - 2 * 4 * 16 * 2 * c
        assert first(16) == 4 * first(8)

    def test_tw_quadratic_in_d(self):
        second = lambda d: flops_tw(3, 3, d, 4) - 2 * 9 * d * 16
        assert second(4) == 4 * second(2)

    @given(dim, dim, dim, dim, st.integers(1, 8), st.integers(1, 8))
    @settings(max_examples=100)
    def test_st_is_sum(self, h, w, d, c, gh, gw):
        assert flops_st(h, w, d, c, gh, gw) == flops_slw(h, w, d, c, gh, gw) + flops_tw(h, w, d, c)

    def test_st_far_below_global(self):
        assert flops_gmsa(128, 128, 8, 64) / flops_st(128, 128, 8, 64) > 100

    @pytest.mark.parametrize("bad", [(0, 1, 1, 1), (1, -2, 1, 1), (1, 1, 1.5, 1)])
    def test_degenerate_rejected(self, bad):
        with pytest.raises(ValueError):
            flops_tw(*bad)
        with pytest.raises(ValueError):
            measure_tw(*bad)


class TestInstrumented:
    def test_slw_single_window(self):
        assert measure_slw(7, 7, 1, 8) == flops_slw(7, 7, 1, 8)

    def test_tw_example(self):
        assert measure_tw(2, 2, 4, 8) == flops_tw(2, 2, 4, 8) == 2560

    @pytest.mark.parametrize("h,w,d,c,n,g", [(14, 7, 2, 8, 2, 7), (4, 6, 3, 4, 1, 2), (8, 8, 4, 16, 4, 4)])
    def test_shifted_and_heads_do_not_change_count(self, h, w, d, c, n, g):
        expected = flops_slw(h, w, d, c, g, g)
        assert measure_slw(h, w, d, c, n, g, g, shifted=True) == expected
        assert measure_slw(h, w, d, c, n, g, g) == expected

    def test_breakdown(self):
        bd = count_macs_attention(14, 14, 2, 8, heads=2)
        assert bd.measured_macs["st_msa"] == bd.analytic_macs["st_msa"]
        assert json.loads(bd.to_json())["dims"]["N"] == 2


class TestNetwork:
    @pytest.mark.parametrize("kw,n", [(dict(), 32), (dict(in_channels=4, out_channels=3), 32), (dict(), 18)])
    def test_model_matches_instrumented(self, kw, n):
        cfg = ModelConfig(channels=8, blocks_per_stage=(2,), heads=2, frames=2, window=(7, 7), **kw)
        assert measure_network_macs(cfg, n, n) == network_macs(cfg, n, n)["total"]

    def test_presets_monotone_and_near_reference(self):
        totals = []
        for name in "SBL":
            rep = preset_report(name)
            totals.append(rep["macs"]["total"])
            assert abs(rep["params_rel_diff"]) < 0.15
            assert abs(rep["gflops_rel_diff"]) < 0.15
        assert totals[0] < totals[1] < totals[2]
        assert REFERENCE["S"]["gflops"] < REFERENCE["B"]["gflops"] < REFERENCE["L"]["gflops"]

    def test_non_reference_input_has_no_diff(self):
        assert "gflops_rel_diff" not in preset_report("S", 128, 128)
