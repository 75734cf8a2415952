import json
import math

import numpy as np
import pytest

from batchrenorm import gradcheck
from batchrenorm.gradcheck import (
    FdReport,
    check_norm_backward,
    compare_grads,
    fd_gradient,
    format_report_text,
    report_json_lines,
)


class TestFdGradient:
    def test_quadratic(self):
        got = fd_gradient(lambda x: float(np.sum(x * x)), np.array([1.0, 2.0]), 1e-5)
        assert np.allclose(got, [2.0, 4.0], atol=1e-8)

    def test_constant_function(self):
        got = fd_gradient(lambda x: 3.5, np.zeros((2, 2)), 1e-4)
        assert np.array_equal(got, np.zeros((2, 2)))

    def test_sum_of_sines_at_zero(self):
        got = fd_gradient(lambda x: float(np.sum(np.sin(x))), np.zeros(4), 1e-4)
        assert np.allclose(got, np.ones(4), atol=1e-8)

    def test_nonfinite_loss_raises(self):
        def bad(x):
            return float("nan")

        with pytest.raises(FloatingPointError):
            fd_gradient(bad, np.zeros(2), 1e-4)

    def test_bad_h_rejected(self):
        with pytest.raises(ValueError):
            fd_gradient(lambda x: 0.0, np.zeros(2), 0.0)

    def test_input_not_mutated(self):
        x = np.array([1.0, 2.0, 3.0])
        fd_gradient(lambda v: float(np.sum(v ** 3)), x, 1e-4)
        assert np.array_equal(x, [1.0, 2.0, 3.0])


class TestCompareGrads:
    def test_identical_passes(self):
        a = np.array([1.0, -2.0])
        check = compare_grads("g", a, a.copy(), 1e-6)
        assert check.passed and check.max_rel_err == 0.0

    def test_relative_error_detected(self):
        check = compare_grads("g", np.array([1.0]), np.array([1.001]), 1e-6)
        assert not check.passed
        assert check.max_rel_err == pytest.approx(1e-3, rel=1e-2)

    def test_negligible_magnitudes_fall_back_to_absolute(self):
        check = compare_grads("g", np.array([1e-12]), np.array([5e-12]), 1e-6)
        assert check.passed


class TestCheckNormBackward:
    def test_bn_4x3_seed7_passes(self):
        report = check_norm_backward((4, 3), mode="bn", seed=7)
        assert report.passed
        assert report.max_rel_err <= 1e-6

    def test_clip_to_identity_matches_bn_report(self):
        bn = check_norm_backward((4, 3), mode="bn", seed=11)
        # brn-clipped with bounds pinned at (1, 0) is the bn specialization.
        from batchrenorm import norm
        from batchrenorm.tensor import Rng

        rng = Rng(11)
        axes = (0,)
        state, _ = gradcheck._mode_state("bn", 3, rng)
        x = rng.normal((4, 3), 0.0, 1.5)
        d_y = rng.normal((4, 3), 0.0, 1.0)
        _, cache = norm.brn_forward_train(x, state, axes,
                                          norm.CorrectionSchedule.fixed(1.0, 0.0))
        assert np.array_equal(cache.r, np.ones(3))
        assert np.array_equal(cache.d, np.zeros(3))
        assert bn.passed

    @pytest.mark.parametrize("mode", gradcheck.MODES)
    @pytest.mark.parametrize("shape", [(8, 3), (4, 3, 2, 2)])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_full_matrix(self, mode, shape, seed):
        report = check_norm_backward(shape, mode=mode, seed=seed)
        assert report.passed, format_report_text([report])

    @pytest.mark.parametrize("m", [2, 4, 8])
    @pytest.mark.parametrize("features", [1, 3, 5])
    def test_shape_sweep_unclipped(self, m, features):
        report = check_norm_backward((m, features), mode="brn-unclipped", seed=3)
        assert report.passed, format_report_text([report])

    def test_h_sweep_u_shaped_or_flat(self):
        errs = [
            check_norm_backward((6, 3), mode="brn-unclipped", seed=5, h=h).max_rel_err
            for h in (1e-3, 1e-4, 1e-5)
        ]
        assert min(errs) <= 1e-6
        assert errs[1] <= max(errs[0], errs[2]) + 1e-12

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            check_norm_backward((4, 3), mode="bogus", seed=0)


class TestReportFormats:
    def test_text_is_aligned(self):
        reports = [check_norm_backward((4, 3), mode="bn", seed=0)]
        text = format_report_text(reports)
        lines = text.splitlines()
        assert lines[0].split()[:2] == ["check", "param"]
        assert len({line.index("d_") for line in lines[1:]}) == 1

    def test_json_lines_parse(self):
        reports = [check_norm_backward((4, 3), mode="bn", seed=0)]
        for line in report_json_lines(reports):
            doc = json.loads(line)
            assert {"check", "param", "max_rel_err", "max_abs_err", "h",
                    "threshold", "pass"} <= set(doc)
