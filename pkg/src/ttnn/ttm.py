"""Tensor-train-matrix layers and their contraction schedules.

A layer holds ``d`` order-4 cores; core ``n`` has shape
``(R[n], J[n], I[n], R[n+1])`` with ``R[0] == R[d] == 1``.  The forward
pass, the input-gradient pass and the factor-gradient pass are each a
fixed chain of contractions, every step shaped so it runs on PE1 or PE2
without permuting the intermediate tensor (cores, which live on chip, are
pre-arranged as needed).  ``materialize_weight`` is the slow reference
construction of the full matrix; it is used by tests only, never by the
training path.
"""

from dataclasses import dataclass

import numpy as np

from . import pesim
from .tensor import ShapeError, prod


class Engine:
    """Dispatches chain steps onto PE kernels.

    ``post`` is an optional per-stage hook ``f(label, array) -> array``
    (used to re-quantize intermediates in fixed mode); ``cost_sink`` is an
    optional ``f(label, CostReport)`` for cycle/traffic accounting.
    """

    def __init__(self, cfg=None, post=None, cost_sink=None):
        self.cfg = cfg or pesim.DEFAULT_CONFIG
        self.post = post
        self.cost_sink = cost_sink

    def stage(self, label, arr):
        return self.post(label, arr) if self.post is not None else arr

    def _wrap(self, label, fn, *args):
        report = pesim.CostReport() if self.cost_sink is not None else None
        try:
            out = fn(*args, cfg=self.cfg, report=report)
        except pesim.AlignmentError as exc:
            raise pesim.AlignmentError(f"{label}: {exc}") from None
        if report is not None:
            self.cost_sink(label, report)
        return self.stage(label, out)

    def pe1(self, label, zk, gl):
        return self._wrap(label, pesim.pe1, zk, gl)

    def pe2(self, label, zk, gl):
        return self._wrap(label, pesim.pe2, zk, gl)

    def pe3_batch(self, label, x, gy):
        return self._wrap(label, pesim.pe3_batch, x, gy)


@dataclass
class TTMLayer:
    """TT-matrix factorization of one fully connected layer."""

    cores: list
    bias: np.ndarray

    def __post_init__(self):
        self.cores = [np.asarray(c) for c in self.cores]
        self.bias = np.asarray(self.bias)
        self.validate()

    def validate(self):
        if not self.cores:
            raise ShapeError("a TTM layer needs at least one core")
        for n, core in enumerate(self.cores):
            if core.ndim != 4:
                raise ShapeError(f"core {n} must be order 4, got shape {core.shape}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[3] != 1:
            raise ShapeError("chain-end ranks must be 1")
        for n in range(len(self.cores) - 1):
            if self.cores[n].shape[3] != self.cores[n + 1].shape[0]:
                raise ShapeError(
                    f"cores {n} and {n + 1} disagree on the shared rank: "
                    f"{self.cores[n].shape[3]} vs {self.cores[n + 1].shape[0]}"
                )
        if self.bias.shape != (self.out_size,):
            raise ShapeError(
                f"bias must have shape ({self.out_size},), got {self.bias.shape}"
            )

    @property
    def d(self):
        return len(self.cores)

    @property
    def in_dims(self):
        return tuple(c.shape[2] for c in self.cores)

    @property
    def out_dims(self):
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self):
        return tuple(c.shape[0] for c in self.cores) + (1,)

    @property
    def in_size(self):
        return prod(self.in_dims)

    @property
    def out_size(self):
        return prod(self.out_dims)

    @property
    def n_params(self):
        return sum(c.size for c in self.cores) + self.bias.size

    def copy(self):
        return TTMLayer([c.copy() for c in self.cores], self.bias.copy())

    @staticmethod
    def random(in_dims, out_dims, ranks, rng, scale=None):
        """Random layer whose materialized matrix has roughly He-init scale."""
        d = len(in_dims)
        if len(out_dims) != d:
            raise ShapeError("in_dims and out_dims must have equal length")
        if len(ranks) != d + 1 or ranks[0] != 1 or ranks[-1] != 1:
            raise ShapeError("ranks must be (1, R_1, ..., R_{d-1}, 1)")
        if scale is None:
            fan_in = prod(in_dims)
            target_var = 2.0 / fan_in
            rank_paths = prod(ranks[1:-1]) if d > 1 else 1
            scale = (target_var / rank_paths) ** (1.0 / (2 * d))
        cores = [
            rng.normal(0.0, scale, size=(ranks[n], out_dims[n], in_dims[n], ranks[n + 1]))
            for n in range(d)
        ]
        return TTMLayer(cores, np.zeros(prod(out_dims)))


@dataclass(frozen=True)
class DispatchEntry:
    eq: str
    pe: str
    a: int
    b: int
    c: int
    d: int


# Kernel assignment and operand grouping per contraction step.  Sizes are
# functions of the layer's (I, J, R); JI[n] = J[n] * I[n].  The batch
# dimension folds into the leading group "a" of the per-sample steps.
_PER_SAMPLE = {"ct1", "ct2", "ct3", "ct4", "ct5", "ct6"}


def _table(I, J, R):
    d = len(I)
    JI = [J[n] * I[n] for n in range(d)]
    table = {
        "ct1": ("PE1", prod(I[:d - 1]), 1, I[d - 1], R[d - 1] * J[d - 1]),
        "ct3": ("PE2", 1, I[0] * R[1], prod(J[1:]), J[0]),
        "ct4": ("PE2", 1, J[0], prod(J[1:]), I[0] * R[1]),
        "ct6": ("PE1", prod(I[:d - 1]), R[d - 1], J[d - 1], I[d - 1]),
        "ct8": ("PE1", prod(JI[:d - 1]), 1, JI[d - 1], R[d - 1]),
    }
    if d >= 2:
        table["ct2"] = ("PE2", prod(I[:d - 2]), I[d - 2] * R[d - 1],
                        J[d - 1], R[d - 2] * J[d - 2])
        table["ct9"] = ("PE1", JI[0], 1, JI[1] * R[2], R[1])
        table["ct10"] = ("PE2", 1, JI[0], JI[1] * R[2], R[1])
        table["ct13"] = ("PE1", prod(JI[:d - 2]), 1, JI[d - 2] * R[d - 1], R[d - 2])
    if d >= 3:
        table["ct5"] = ("PE2", I[0], R[1] * J[1], prod(J[2:]), I[1] * R[2])
        table["ct11"] = ("PE2", 1, JI[0], JI[1] * JI[2] * R[3], R[1])
        table["ct12"] = ("PE2", 1, R[1] * JI[1], JI[2] * R[3], R[2])
    return table


def dispatch(eq_id, layer, batch=1):
    """Operand grouping and PE assignment for one contraction step."""
    I, J, R = layer.in_dims, layer.out_dims, layer.ranks
    table = _table(I, J, R)
    if eq_id not in table:
        raise KeyError(f"unknown or inapplicable contraction id: {eq_id}")
    pe, a, b, c, dg = table[eq_id]
    if eq_id in _PER_SAMPLE:
        a *= batch
    return DispatchEntry(eq_id, pe, a, b, c, dg)


def materialize_interleaved(layer):
    """Full weight tensor with interleaved indices (j1, i1, ..., jd, id)."""
    t = layer.cores[0][0]  # (J1, I1, R1)
    for n in range(1, layer.d):
        t = np.einsum("...a,abcd->...bcd", t, layer.cores[n])
    return t[..., 0]


def materialize_weight(layer):
    """Reference dense matrix (out_size x in_size).  Test oracle only."""
    t = materialize_interleaved(layer)
    d = layer.d
    perm = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
    return t.transpose(perm).reshape(layer.out_size, layer.in_size)


def _as_batch(x, size, what):
    x = np.asarray(x)
    squeeze = x.ndim == 1 or x.size == size
    n = 1 if squeeze else x.shape[0]
    if x.size != n * size:
        raise ShapeError(f"{what} has {x.size} elements, expected multiple of {size}")
    return x.reshape(n, size), n, squeeze and x.ndim == 1


def forward(layer, x, engine=None):
    """``y = W x + bias`` via the ct1 -> ct2 -> ... -> ct3 chain."""
    eng = engine or Engine()
    I, J, R, d = layer.in_dims, layer.out_dims, layer.ranks, layer.d
    x, n, squeeze = _as_batch(x, layer.in_size, "input")
    z = eng.pe1(
        "ct1",
        x.reshape(n * prod(I[:d - 1]), 1, I[d - 1]),
        layer.cores[-1].reshape(1, R[d - 1] * J[d - 1], I[d - 1]),
    )
    # state: (batch, i_1..i_{d-1}, r_{d-1}, j_d), flattened row-major
    for m in range(d - 1, 0, -1):
        a = n * prod(I[:m - 1])
        b = I[m - 1] * R[m]
        c = prod(J[m:])
        gl = layer.cores[m - 1].transpose(2, 3, 0, 1).reshape(b, R[m - 1] * J[m - 1])
        label = "ct3" if m == 1 else f"ct2[{m}]"
        z = eng.pe2(label, z.reshape(a, b, c), gl)
    y = z.reshape(n, layer.out_size) + layer.bias
    y = eng.stage("y", y)
    return y[0] if squeeze else y


def backward_input(layer, gy, engine=None):
    """``gx = W^T gy`` via the ct4 -> ct5 -> ... -> ct6 chain."""
    eng = engine or Engine()
    I, J, R, d = layer.in_dims, layer.out_dims, layer.ranks, layer.d
    gy, n, squeeze = _as_batch(gy, layer.out_size, "output gradient")
    z = eng.pe2(
        "ct4",
        gy.reshape(n, J[0], prod(J[1:])),
        layer.cores[0].reshape(J[0], I[0] * R[1]),
    )
    # state: (batch, i_1, r_1, j_2..j_d)
    for m in range(1, d - 1):
        a = n * prod(I[:m])
        b = R[m] * J[m]
        c = prod(J[m + 1:])
        gl = layer.cores[m].reshape(b, I[m] * R[m + 1])
        z = eng.pe2(f"ct5[{m + 1}]", z.reshape(a, b, c), gl)
    if d > 1:
        a = n * prod(I[:d - 1])
        gl = layer.cores[-1].reshape(R[d - 1], J[d - 1], I[d - 1]).transpose(0, 2, 1)
        z = eng.pe1("ct6", z.reshape(a, R[d - 1], J[d - 1]), gl)
    gx = z.reshape(n, layer.in_size)
    return gx[0] if squeeze else gx


def _interleave_perm(d):
    perm = []
    for k in range(d):
        perm.extend((k, d + k))
    return perm


def grad_full_weight(layer, x, gy, engine=None):
    """Batch-summed gradient w.r.t. the full weight, interleaved layout.

    Returns the order-2d tensor with index order (j1, i1, ..., jd, id),
    which is exactly the operand layout the ct8 chain consumes.
    """
    eng = engine or Engine()
    x, n, _ = _as_batch(x, layer.in_size, "input")
    gy, ng, _ = _as_batch(gy, layer.out_size, "output gradient")
    if n != ng:
        raise ShapeError(f"batch mismatch: {n} inputs vs {ng} gradients")
    if eng.cfg.strict and layer.in_dims[-1] % eng.cfg.pe3_lanes != 0:
        raise pesim.AlignmentError(
            f"ct7: pe3 result last dimension {layer.in_dims[-1]} "
            f"is not a multiple of {eng.cfg.pe3_lanes}")
    w = eng.pe3_batch("ct7", x, gy)  # (out_size, in_size)
    w = w.reshape(layer.out_dims + layer.in_dims).transpose(_interleave_perm(layer.d))
    return eng.stage("w_hat", np.ascontiguousarray(w))


def _down_chain(layer, w_hat, eng):
    """Contract w_hat with cores d, d-1, ... from the right (ct8, ct13)."""
    I, J, R, d = layer.in_dims, layer.out_dims, layer.ranks, layer.d
    JI = [J[k] * I[k] for k in range(d)]
    right = [np.asarray(w_hat).reshape(prod(JI))]
    z = right[0]
    for m in range(1, d):
        ci = d - m  # core being contracted (0-based)
        a = prod(JI[:ci])
        c = JI[ci] * R[ci + 1]
        gl = layer.cores[ci].reshape(1, R[ci], c)
        label = "ct8" if m == 1 else f"ct13[{m}]"
        z = eng.pe1(label, z.reshape(a, 1, c), gl)  # (a, R[ci])
        right.append(z)
    return right  # right[m] covers indices (j1 i1 .. j_{d-m} i_{d-m}, r_{d-m})


def grad_factors(layer, w_hat, engine=None, share=True):
    """Gradients w.r.t. every core, from the accumulated full-weight gradient.

    The right-to-left chain is computed once and shared across all targets
    (``share=False`` recomputes it per target; the results are identical,
    sharing is purely an optimization).
    """
    eng = engine or Engine()
    I, J, R, d = layer.in_dims, layer.out_dims, layer.ranks, layer.d
    JI = [J[k] * I[k] for k in range(d)]
    if np.asarray(w_hat).size != prod(JI):
        raise ShapeError(
            f"full-weight gradient has {np.asarray(w_hat).size} elements, "
            f"expected {prod(JI)}")
    right = _down_chain(layer, w_hat, eng) if share else None
    grads = []
    for nt in range(1, d + 1):  # target core, 1-based
        src = (right if share else _down_chain(layer, w_hat, eng))[d - nt]
        z = src
        # contract cores 1 .. nt-1 from the left (ct10 / ct11 / ct12)
        for m in range(1, nt):
            b = R[m - 1] * JI[m - 1]
            c = prod(JI[m:nt]) * R[nt]
            gl = layer.cores[m - 1].reshape(b, R[m])
            if m == 1:
                label = "ct10" if nt == 2 else f"ct11[n{nt}]"
            else:
                label = f"ct12[n{nt}.{m}]"
            z = eng.pe2(label, z.reshape(1, b, c), gl)  # (1, R[m], c)
        grads.append(z.reshape(R[nt - 1], J[nt - 1], I[nt - 1], R[nt]))
    return grads
