"""Contraction oracle: nested-loop reference, shape errors, overflow guard."""

import itertools

import numpy as np
import pytest

from ttnn.tensor import (AccumulatorOverflow, ShapeError, contract, outer,
                         prod, reshape)


def loop_contract(a, b, a_axes, b_axes):
    """Naive nested-loop sum-product, the ground truth for contract()."""
    a_keep = [ax for ax in range(a.ndim) if ax not in a_axes]
    b_keep = [bx for bx in range(b.ndim) if bx not in b_axes]
    out_shape = [a.shape[ax] for ax in a_keep] + [b.shape[bx] for bx in b_keep]
    out = np.zeros(out_shape)
    sum_shape = [a.shape[ax] for ax in a_axes]
    for out_idx in itertools.product(*(range(s) for s in out_shape)):
        total = 0.0
        for sum_idx in itertools.product(*(range(s) for s in sum_shape)):
            ai = [0] * a.ndim
            bi = [0] * b.ndim
            for k, ax in enumerate(a_keep):
                ai[ax] = out_idx[k]
            for k, bx in enumerate(b_keep):
                bi[bx] = out_idx[len(a_keep) + k]
            for k, (ax, bx) in enumerate(zip(a_axes, b_axes)):
                ai[ax] = sum_idx[k]
                bi[bx] = sum_idx[k]
            total += a[tuple(ai)] * b[tuple(bi)]
        out[out_idx] = total
    return out


def test_dot_product_example():
    assert contract([1.0, 2.0], [3.0, 4.0], 0, 0) == 11.0


def test_identity_example():
    assert np.array_equal(contract(np.eye(2), [5.0, 7.0], 1, 0), [5.0, 7.0])


def test_contract_matches_loop_oracle(rng):
    for _ in range(25):
        na = int(rng.integers(1, 5))
        nb = int(rng.integers(1, 5))
        a_shape = tuple(int(s) for s in rng.integers(1, 6, na))
        b_shape = list(rng.integers(1, 6, nb))
        n_pairs = int(rng.integers(1, min(na, nb) + 1))
        a_axes = list(rng.choice(na, n_pairs, replace=False))
        b_axes = list(rng.choice(nb, n_pairs, replace=False))
        for ax, bx in zip(a_axes, b_axes):
            b_shape[bx] = a_shape[ax]
        a = rng.normal(size=a_shape)
        b = rng.normal(size=tuple(int(s) for s in b_shape))
        got = contract(a, b, a_axes, b_axes)
        want = loop_contract(a, b, a_axes, b_axes)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


def test_contract_is_bilinear(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    assert np.allclose(contract(2.5 * a, b, 1, 0), 2.5 * contract(a, b, 1, 0))
    a2 = rng.normal(size=(3, 4))
    assert np.allclose(contract(a + a2, b, 1, 0),
                       contract(a, b, 1, 0) + contract(a2, b, 1, 0))


def test_contract_axis_mismatch():
    with pytest.raises(ShapeError):
        contract(np.ones((2, 3)), np.ones((4, 2)), 1, 0)
    with pytest.raises(ShapeError):
        contract(np.ones((2, 3)), np.ones((3, 2)), [0, 1], [0])


def test_integer_contraction_is_exact_int64():
    a = np.arange(6, dtype=np.int32).reshape(2, 3)
    b = np.arange(6, dtype=np.int16).reshape(3, 2)
    out = contract(a, b, 1, 0)
    assert out.dtype == np.int64
    assert np.array_equal(out, a.astype(np.int64) @ b.astype(np.int64))


def test_integer_overflow_guard():
    big = np.full((2, 2), 2**31, dtype=np.int64)
    with pytest.raises(AccumulatorOverflow):
        contract(big, big, 1, 0)
    with pytest.raises(AccumulatorOverflow):
        outer(np.array([2**32], dtype=np.int64), np.array([2**32], dtype=np.int64))


def test_outer_examples(rng):
    assert np.array_equal(outer([1.0, 2.0], [3.0]), [[3.0], [6.0]])
    assert np.array_equal(outer([0.0, 0.0], [4.0, 5.0]), np.zeros((2, 2)))
    a = rng.normal(size=56)
    b = rng.normal(size=64)
    got = outer(a, b)
    assert got.shape == (56, 64)
    for i in (0, 13, 55):
        for j in (0, 31, 63):
            assert got[i, j] == a[i] * b[j]


def test_reshape_checked_and_composes(rng):
    t = rng.normal(size=(2, 3, 4))
    assert np.array_equal(reshape(reshape(t, (6, 4)), (2, 3, 4)), t)
    assert np.array_equal(reshape(t, (24,)), t.ravel())
    with pytest.raises(ShapeError):
        reshape(t, (5, 5))


def test_prod():
    assert prod(()) == 1
    assert prod((2, 3, 4)) == 24
