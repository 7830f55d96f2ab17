"""Fixed-point formats, quantizer semantics, STE, and scale tracking."""

import numpy as np
import pytest

from ttnn.quant import (FixedFormat, ScaleTracker, auto_step_exp, dequantize,
                        factor_step_exp, quantize, quantize_value,
                        relu_backward, ste_quant_grad)


def test_format_range():
    fmt = FixedFormat(4, -3)
    assert fmt.step == 0.125
    assert (fmt.min_code, fmt.max_code) == (-8, 7)
    assert (fmt.min_value, fmt.max_value) == (-1.0, 0.875)
    with pytest.raises(ValueError):
        FixedFormat(1, 0)


def test_quantize_worked_examples():
    fmt = FixedFormat(4, -3)
    assert quantize(0.26, fmt) == 2
    assert quantize_value(0.26, fmt) == 0.25
    assert quantize(10.0, fmt) == 7          # saturates
    assert quantize_value(10.0, fmt) == 0.875
    assert quantize(-10.0, fmt) == -8
    for bits, k in ((4, -3), (8, 0), (16, -12)):
        assert quantize(0.0, FixedFormat(bits, k)) == 0


def test_round_half_to_even():
    fmt = FixedFormat(8, -3)
    assert quantize(0.1875, fmt) == 2   # 1.5 steps -> even 2
    assert quantize(0.3125, fmt) == 2   # 2.5 steps -> even 2
    assert quantize(-0.1875, fmt) == -2


def test_quantize_idempotent_and_bounded(rng):
    fmt = FixedFormat(8, -5)
    x = rng.normal(0, 1, 1000)
    codes = quantize(x, fmt)
    assert np.array_equal(quantize(dequantize(codes, fmt), fmt), codes)
    inside = (x >= fmt.min_value) & (x <= fmt.max_value)
    err = np.abs(dequantize(codes, fmt) - x)
    assert np.all(err[inside] <= fmt.step / 2 + 1e-15)


def test_quantize_monotone(rng):
    fmt = FixedFormat(6, -4)
    x = np.sort(rng.normal(0, 2, 500))
    codes = quantize(x, fmt)
    assert np.all(np.diff(codes) >= 0)


def test_ste_quant_grad():
    fmt = FixedFormat(4, -3)
    assert ste_quant_grad(1.0, 0.5, fmt) == 1.0
    assert ste_quant_grad(1.0, 2 * fmt.max_value, fmt) == 0.0
    # mask equals finite differences of the clamp surrogate
    x = np.linspace(-2, 2, 101)
    h = 1e-6
    clamp = lambda v: np.clip(v, fmt.min_value, fmt.max_value)
    fd = (clamp(x + h) - clamp(x - h)) / (2 * h)
    got = ste_quant_grad(np.ones_like(x), x, fmt)
    interior = (np.abs(x - fmt.min_value) > h) & (np.abs(x - fmt.max_value) > h)
    assert np.allclose(got[interior], fd[interior])


def test_relu_backward():
    assert relu_backward(5.0, 2.0) == 5.0
    assert relu_backward(5.0, -2.0) == 0.0
    assert relu_backward(5.0, 0.0) == 5.0   # boundary included


def test_auto_step_exp_targets_band(rng):
    x = rng.normal(0, 0.03, 10000)
    for bits in (8, 16):
        fmt = FixedFormat(bits, auto_step_exp(x, bits))
        mean = np.mean(np.abs(quantize(x, fmt))) / 2 ** (bits - 1)
        assert 0.1 <= mean <= 0.3


def test_factor_step_exp_headroom(rng):
    x = rng.normal(0, 0.2, 500)
    fmt = FixedFormat(4, factor_step_exp(x, 4))
    # the largest entry fits, and uses a decent share of the code range
    assert np.max(np.abs(x)) <= -fmt.min_value
    assert np.max(np.abs(quantize(x, fmt))) >= fmt.max_code // 2


def test_tracker_adjust_examples():
    tr = ScaleTracker(16, -7)
    tr.mean_abs = 0.45
    tr.adjust()
    assert tr.step_exp == -6 and tr.mean_abs == pytest.approx(0.225)
    tr.mean_abs = 0.2
    tr.adjust()
    assert tr.step_exp == -6                 # in band: unchanged
    tr.mean_abs = 0.06
    tr.adjust()
    assert tr.step_exp == -7 and tr.mean_abs == pytest.approx(0.12)


def test_tracker_requires_observation():
    with pytest.raises(ValueError):
        ScaleTracker(8, 0).adjust()


def test_tracker_converges_and_stays(rng):
    # badly initialized scale; repeated observe+adjust must land in band
    tr = ScaleTracker(8, 6)
    x = rng.normal(0, 0.05, 2000)
    for _ in range(40):
        tr.observe(quantize(x, tr.fmt))
        tr.adjust()
    settled = tr.step_exp
    for _ in range(10):
        tr.observe(quantize(x, tr.fmt))
        tr.adjust()
        assert abs(tr.step_exp - settled) <= 1
    mean = np.mean(np.abs(quantize(x, tr.fmt))) / 2 ** 7
    assert 0.1 <= mean <= 0.3
