"""TTM layers: materialization oracle, chain correctness, gradients, dispatch."""

import itertools

import numpy as np
import pytest

from ttnn.quant import FixedFormat, factor_step_exp, quantize_value
from ttnn.tensor import ShapeError
from ttnn.ttm import (Engine, TTMLayer, backward_input, dispatch, forward,
                      grad_factors, grad_full_weight, materialize_interleaved,
                      materialize_weight)

from conftest import random_layer


def loop_materialize(layer):
    """Direct definition: W(j1..jd, i1..id) = product of rank-slice matrices."""
    out = np.zeros(layer.out_dims + layer.in_dims)
    for js in itertools.product(*(range(j) for j in layer.out_dims)):
        for is_ in itertools.product(*(range(i) for i in layer.in_dims)):
            m = layer.cores[0][:, js[0], is_[0], :]
            for n in range(1, layer.d):
                m = m @ layer.cores[n][:, js[n], is_[n], :]
            out[js + is_] = m[0, 0]
    return out.reshape(layer.out_size, layer.in_size)


def test_materialize_single_core(rng):
    core = rng.normal(size=(1, 3, 2, 1))
    layer = TTMLayer([core], np.zeros(3))
    assert np.allclose(materialize_weight(layer), core[0, :, :, 0])


def test_materialize_all_ones_rank2():
    cores = [np.ones((1, 2, 2, 2)), np.ones((2, 2, 2, 1))]
    layer = TTMLayer(cores, np.zeros(4))
    assert np.all(materialize_weight(layer) == 2.0)


def test_materialize_matches_loop_oracle(rng):
    for _ in range(10):
        layer = random_layer(rng, max_dim=3, max_rank=3)
        assert np.allclose(materialize_weight(layer), loop_materialize(layer),
                           rtol=1e-12, atol=1e-12)


def test_forward_backward_match_materialized(rng):
    for _ in range(30):
        layer = random_layer(rng)
        w = materialize_weight(layer)
        x = rng.normal(size=(5, layer.in_size))
        y = forward(layer, x)
        want = x @ w.T + layer.bias
        assert np.allclose(y, want, rtol=1e-9, atol=1e-12)
        gy = rng.normal(size=(5, layer.out_size))
        gx = backward_input(layer, gy)
        assert np.allclose(gx, gy @ w, rtol=1e-9, atol=1e-12)


def test_forward_basis_probe_and_zero(rng):
    layer = random_layer(rng, d=3)
    w = materialize_weight(layer)
    e1 = np.zeros(layer.in_size)
    e1[0] = 1.0
    assert np.allclose(forward(layer, e1) - layer.bias, w[:, 0])
    assert np.allclose(forward(layer, np.zeros(layer.in_size)), layer.bias)


def test_backward_basis_probe(rng):
    layer = random_layer(rng, d=2)
    w = materialize_weight(layer)
    e1 = np.zeros(layer.out_size)
    e1[0] = 1.0
    assert np.allclose(backward_input(layer, e1), w[0])
    assert np.allclose(backward_input(layer, np.zeros(layer.out_size)), 0.0)


def test_single_sample_shape(rng):
    layer = random_layer(rng, d=2)
    x = rng.normal(size=layer.in_size)
    assert forward(layer, x).shape == (layer.out_size,)


def test_grad_full_weight_examples(rng):
    cores = [np.ones((1, 1, 2, 1))]
    layer = TTMLayer(cores, np.zeros(1))
    w = grad_full_weight(layer, np.array([[1.0, 2.0]]), np.array([[3.0]]))
    assert np.array_equal(w.reshape(1, 2), [[3.0, 6.0]])
    # two identical samples accumulate to exactly twice one sample
    layer = random_layer(rng, d=3)
    x = rng.normal(size=(1, layer.in_size))
    gy = rng.normal(size=(1, layer.out_size))
    one = grad_full_weight(layer, x, gy)
    two = grad_full_weight(layer, np.vstack([x, x]), np.vstack([gy, gy]))
    assert np.allclose(two, 2 * one)


def test_grad_full_weight_matches_outer_oracle(rng):
    layer = random_layer(rng, d=2)
    x = rng.normal(size=(4, layer.in_size))
    gy = rng.normal(size=(4, layer.out_size))
    got = grad_full_weight(layer, x, gy)
    dense = sum(np.outer(gy[b], x[b]) for b in range(4))
    d = layer.d
    want = dense.reshape(layer.out_dims + layer.in_dims)
    perm = []
    for k in range(d):
        perm.extend((k, d + k))
    assert np.allclose(got, want.transpose(perm))


def test_grad_factors_zero_and_loop_oracle(rng):
    layer = random_layer(rng, d=2, max_dim=3, max_rank=3)
    zero = np.zeros([j * i for j, i in zip(layer.out_dims, layer.in_dims)])
    for g in grad_factors(layer, zero):
        assert np.all(g == 0.0)
    w_hat = rng.normal(size=zero.shape)
    g1 = grad_factors(layer, w_hat)[0]
    # direct contraction: G1_hat(j1,i1,r1) = sum_{j2,i2} W_hat * G2(r1,j2,i2)
    J, I = layer.out_dims, layer.in_dims
    wt = w_hat.reshape(J[0], I[0], J[1], I[1])
    want = np.einsum("abcd,rcd->abr", wt, layer.cores[1][:, :, :, 0])
    assert np.allclose(g1[0], want, rtol=1e-10, atol=1e-12)


def test_grad_factors_finite_differences(rng):
    for _ in range(8):
        layer = random_layer(rng, max_dim=3, max_rank=3)
        w_hat = rng.normal(size=tuple(
            j * i for j, i in zip(layer.out_dims, layer.in_dims)))
        grads = grad_factors(layer, w_hat)
        # loss L = <w_hat, materialized interleaved weight>
        def loss():
            return float(np.sum(w_hat.ravel() * materialize_interleaved(layer).ravel()))
        h = 1e-6
        for n in range(layer.d):
            core = layer.cores[n]
            for _ in range(4):
                idx = tuple(int(rng.integers(0, s)) for s in core.shape)
                keep = core[idx]
                core[idx] = keep + h
                up = loss()
                core[idx] = keep - h
                down = loss()
                core[idx] = keep
                fd = (up - down) / (2 * h)
                assert grads[n][idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_grad_factors_sharing_is_bit_identical(rng):
    layer = random_layer(rng, d=4, max_dim=3, max_rank=3)
    w_hat = rng.normal(size=tuple(
        j * i for j, i in zip(layer.out_dims, layer.in_dims)))
    shared = grad_factors(layer, w_hat, share=True)
    unshared = grad_factors(layer, w_hat, share=False)
    for a, b in zip(shared, unshared):
        assert np.array_equal(a, b)


def default_layer1():
    rng = np.random.default_rng(0)
    return TTMLayer.random((7, 4, 2, 16), (4, 4, 2, 16), (1, 16, 16, 16, 1), rng)


def test_dispatch_table_rows():
    layer = default_layer1()
    I, J, R = layer.in_dims, layer.out_dims, layer.ranks
    e = dispatch("ct1", layer, batch=64)
    assert (e.pe, e.a, e.b, e.c, e.d) == (
        "PE1", 64 * I[0] * I[1] * I[2], 1, I[3], R[3] * J[3])
    e = dispatch("ct4", layer)
    assert (e.pe, e.a, e.b, e.c, e.d) == ("PE2", 1, J[0], J[1] * J[2] * J[3],
                                          I[0] * R[1])
    e = dispatch("ct12", layer)
    assert (e.pe, e.a, e.b, e.c, e.d) == (
        "PE2", 1, R[1] * J[1] * I[1], J[2] * I[2] * R[3], R[2])
    with pytest.raises(KeyError):
        dispatch("ct99", layer)


def test_layer_validation():
    with pytest.raises(ShapeError):
        TTMLayer([np.zeros((2, 2, 2))], np.zeros(2))          # not order 4
    with pytest.raises(ShapeError):
        TTMLayer([np.zeros((2, 2, 2, 1))], np.zeros(2))       # chain-end rank
    with pytest.raises(ShapeError):
        TTMLayer([np.zeros((1, 2, 2, 3)), np.zeros((2, 2, 2, 1))], np.zeros(4))
    with pytest.raises(ShapeError):
        TTMLayer([np.zeros((1, 2, 2, 1))], np.zeros(3))       # bias length


def test_random_init_scale(rng):
    layer = TTMLayer.random((7, 4, 2, 16), (4, 4, 2, 16), (1, 16, 16, 16, 1), rng)
    w = materialize_weight(layer)
    target = np.sqrt(2.0 / layer.in_size)
    assert 0.5 * target < w.std() < 2.0 * target


def test_fixed_forward_error_within_accumulated_bound(rng):
    """Quantizing every chain stage at 8 bits stays inside the propagated
    half-step bound computed from the remaining stage operators."""
    layer = random_layer(rng, d=3, max_dim=4, max_rank=4)
    x = rng.normal(size=(8, layer.in_size))
    exact = forward(layer, x)

    steps = {}

    def post(label, arr):
        # headroom-based scale: no saturation, so the half-step bound applies
        fmt = FixedFormat(8, factor_step_exp(arr, 8, headroom=0.9))
        steps[label] = fmt.step
        return quantize_value(arr, fmt)

    approx = forward(layer, x, Engine(post=post))

    # gain of each remaining PE2 stage: max column abs-sum of its gl operand
    I, J, R, d = layer.in_dims, layer.out_dims, layer.ranks, layer.d
    gains = {}
    for m in range(d - 1, 0, -1):
        gl = layer.cores[m - 1].transpose(2, 3, 0, 1).reshape(
            I[m - 1] * R[m], R[m - 1] * J[m - 1])
        gains[m] = np.abs(gl).sum(axis=0).max()

    bound = 0.0
    stage_after = {"ct1": list(range(d - 1, 0, -1))}
    for m in range(d - 1, 0, -1):
        label = "ct3" if m == 1 else f"ct2[{m}]"
        stage_after[label] = list(range(m - 1, 0, -1))
    for label, rest in stage_after.items():
        if label in steps:
            gain = 1.0
            for m in rest:
                gain *= gains[m]
            bound += steps[label] / 2 * gain
    bound += steps.get("y", 0.0) / 2
    assert np.max(np.abs(approx - exact)) <= bound + 1e-12
