"""Rank-shrinkage training loop with a high-precision buffer.

The optimizer always updates full-precision buffer parameters; the
forward/backward passes run on quantized shadow copies (fixed mode) or on
the buffers themselves (real mode).  Rank-controlling parameters get their
closed-form update every step and slices whose parameter collapses are
pruned on an epoch schedule.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ttm
from .quant import (FixedFormat, ScaleTracker, auto_step_exp, dequantize,
                    factor_step_exp, quantize, quantize_value, relu_backward,
                    ste_quant_grad)
from .tensor import prod
from .ttm import Engine, TTMLayer

FACTOR_BITS = 4
ACT_BITS = 8
GRAD_BITS = 16
LAMBDA_FLOOR = 1e-9
# Per-step weight on the shrinkage-penalty gradient.  The penalty is an
# integral over the whole dataset while each step sees one batch's mean
# cross-entropy; applied at full strength every step it swamps the data
# gradient and collapses useful slices along with idle ones.
PRIOR_WEIGHT = 2e-3


@dataclass
class AdamParams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    sgd: bool = False  # fall back to plain SGD


@dataclass
class LayerState:
    buffer: TTMLayer                  # full-precision parameters
    shadow: TTMLayer                  # quantized image used by fwd/bwd
    lambdas: list                     # rank parameters, one vector per shared rank
    factor_fmts: list                 # FixedFormat per core (fixed at init)
    bias_fmt: FixedFormat
    m: list = None                    # ADAM first moments per core
    v: list = None
    mb: np.ndarray = None             # ... and for the bias
    vb: np.ndarray = None

    def __post_init__(self):
        if self.m is None:
            self.m = [np.zeros_like(c) for c in self.buffer.cores]
            self.v = [np.zeros_like(c) for c in self.buffer.cores]
            self.mb = np.zeros_like(self.buffer.bias)
            self.vb = np.zeros_like(self.buffer.bias)


@dataclass
class TrainState:
    layers: list
    mode: str = "fixed"               # "real" | "fixed"
    prior: bool = True
    prior_weight: float = PRIOR_WEIGHT
    adam: AdamParams = field(default_factory=AdamParams)
    lam_floor: float = LAMBDA_FLOOR
    t: int = 0
    trackers: dict = field(default_factory=dict)

    @property
    def ttm_layers(self):
        return [ls.shadow for ls in self.layers]

    @property
    def n_params(self):
        return sum(ls.buffer.n_params for ls in self.layers)

    @property
    def ranks(self):
        return [ls.buffer.ranks for ls in self.layers]


def update_lambda(cores, floor=LAMBDA_FLOOR):
    """Closed-form rank-parameter update from per-slice Frobenius norms."""
    lams = []
    for n in range(len(cores) - 1):
        core = cores[n]
        r_prev, j, i, _ = core.shape
        coef = 2.0 / (1.0 + r_prev * i * j)
        sq = np.sum(core * core, axis=(0, 1, 2))
        lams.append(np.maximum(coef * sq, floor))
    return lams


def prior_term(cores, lambdas, floor=LAMBDA_FLOOR):
    """Rank-shrinkage penalty for one chain of cores."""
    g = 0.0
    for n in range(len(cores) - 1):
        core = cores[n]
        lam = np.asarray(lambdas[n], dtype=np.float64)
        if np.any(lam < floor):
            raise ValueError("rank parameter below floor")
        r_prev, j, i, _ = core.shape
        sq = np.sum(core * core, axis=(0, 1, 2))
        g += float(np.sum(sq / lam + (1.0 + r_prev * i * j) / 2.0 * np.log(lam)))
    return g


def prior_term_state(state):
    return sum(prior_term(ls.buffer.cores, ls.lambdas, state.lam_floor)
               for ls in state.layers)


def prior_grads(cores, lambdas):
    """Gradient of the shrinkage penalty w.r.t. each core (last core free)."""
    grads = []
    for n in range(len(cores)):
        if n < len(cores) - 1:
            grads.append(2.0 * cores[n] / np.asarray(lambdas[n])[None, None, None, :])
        else:
            grads.append(np.zeros_like(cores[n]))
    return grads


def _quantize_layer(buffer, factor_fmts, bias_fmt):
    cores = [quantize_value(c, f) for c, f in zip(buffer.cores, factor_fmts)]
    return TTMLayer(cores, quantize_value(buffer.bias, bias_fmt))


def refresh_shadow(ls, mode):
    if mode == "fixed":
        ls.shadow = _quantize_layer(ls.buffer, ls.factor_fmts, ls.bias_fmt)
    else:
        ls.shadow = ls.buffer


def init_layer(in_dims, out_dims, ranks, rng, mode):
    buffer = TTMLayer.random(in_dims, out_dims, ranks, rng)
    fmts = [FixedFormat(FACTOR_BITS, factor_step_exp(c, FACTOR_BITS))
            for c in buffer.cores]
    bias_fmt = FixedFormat(ACT_BITS, -(ACT_BITS - 1))
    ls = LayerState(buffer=buffer, shadow=buffer, lambdas=update_lambda(buffer.cores),
                    factor_fmts=fmts, bias_fmt=bias_fmt)
    refresh_shadow(ls, mode)
    return ls


def init_state(layer_specs, rng, mode="fixed", prior=True, adam=None,
               prior_weight=PRIOR_WEIGHT):
    """``layer_specs``: iterable of (in_dims, out_dims, ranks)."""
    layers = [init_layer(i, o, r, rng, mode) for i, o, r in layer_specs]
    for a, b in zip(layers, layers[1:]):
        if a.buffer.out_size != b.buffer.in_size:
            raise ValueError(
                f"layer sizes do not chain: {a.buffer.out_size} -> {b.buffer.in_size}")
    return TrainState(layers=layers, mode=mode, prior=prior,
                      prior_weight=prior_weight, adam=adam or AdamParams())


def _hook(state, tag, bits, observe):
    """Per-stage re-quantization for fixed mode, with shared scale tracking."""

    def post(label, arr):
        key = f"{tag}/{label}"
        tr = state.trackers.get(key)
        if tr is None:
            tr = ScaleTracker(bits, auto_step_exp(arr, bits))
            state.trackers[key] = tr
        codes = quantize(arr, tr.fmt)
        if observe:
            tr.observe(codes)
        return dequantize(codes, tr.fmt)

    return post


def network_forward(state, x, observe=False, cfg=None):
    """Forward through all layers with ReLU between them.

    Returns (logits, caches); each cache holds the layer input and its
    pre-activation output.
    """
    caches = []
    h = np.asarray(x, dtype=np.float64)
    last = len(state.layers) - 1
    for i, ls in enumerate(state.layers):
        post = None
        if state.mode == "fixed":
            post = _hook(state, f"L{i}/fwd", ACT_BITS, observe)
            if i == 0:
                h = post("in", h)
        eng = Engine(cfg, post=post)
        pre = ttm.forward(ls.shadow, h, eng)
        caches.append((h, pre))
        h = np.maximum(pre, 0.0) if i < last else pre
    return h, caches


def softmax_ce(logits, labels):
    """Mean cross-entropy and the per-sample logit gradient (already / N)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    rows = np.arange(n)
    ce = float(np.mean(np.log(ez.sum(axis=1)) - z[rows, labels]))
    g = p.copy()
    g[rows, labels] -= 1.0
    return ce, g / n


def loss_and_grads(state, x, labels, cfg=None):
    """Mean cross-entropy plus data gradients through the quantized path."""
    logits, caches = network_forward(state, x, observe=True, cfg=cfg)
    ce, gy = softmax_ce(logits, labels)
    correct = int(np.sum(np.argmax(logits, axis=1) == labels))
    grads = [None] * len(state.layers)
    for i in reversed(range(len(state.layers))):
        ls = state.layers[i]
        post = _hook(state, f"L{i}/bwd", GRAD_BITS, True) if state.mode == "fixed" else None
        eng = Engine(cfg, post=post)
        gy = eng.stage("gy", gy)
        h_in, pre = caches[i]
        w_hat = ttm.grad_full_weight(ls.shadow, h_in, gy, eng)
        g_cores = ttm.grad_factors(ls.shadow, w_hat, eng)
        g_bias = gy.sum(axis=0)
        grads[i] = (g_cores, g_bias)
        if i > 0:
            gx = ttm.backward_input(ls.shadow, gy, eng)
            pre_prev = caches[i - 1][1]
            gx = relu_backward(gx, pre_prev)
            if state.mode == "fixed":
                tr = state.trackers.get(f"L{i - 1}/fwd/y")
                if tr is not None:
                    gx = ste_quant_grad(gx, pre_prev, tr.fmt)
            gy = gx
    return ce, correct, grads


def _adam_update(p, grad, m, v, t, hp):
    if hp.sgd:
        p -= hp.lr * grad
        return
    m *= hp.beta1
    m += (1 - hp.beta1) * grad
    v *= hp.beta2
    v += (1 - hp.beta2) * grad * grad
    mhat = m / (1 - hp.beta1 ** t)
    vhat = v / (1 - hp.beta2 ** t)
    p -= hp.lr * mhat / (np.sqrt(vhat) + hp.eps)


def training_step(state, x, labels, cfg=None):
    """One iteration: quantized fwd/bwd, buffer update, re-quantize, lambda."""
    state.t += 1
    ce, correct, grads = loss_and_grads(state, x, labels, cfg=cfg)
    for i, ls in enumerate(state.layers):
        g_cores, g_bias = grads[i]
        g_cores = [np.asarray(g, dtype=np.float64) for g in g_cores]
        if state.prior:
            for n, gp in enumerate(prior_grads(ls.buffer.cores, ls.lambdas)):
                g_cores[n] = g_cores[n] + state.prior_weight * gp
        for n, core in enumerate(ls.buffer.cores):
            _adam_update(core, g_cores[n], ls.m[n], ls.v[n], state.t, state.adam)
        _adam_update(ls.buffer.bias, g_bias, ls.mb, ls.vb, state.t, state.adam)
        refresh_shadow(ls, state.mode)
        ls.lambdas = update_lambda(ls.buffer.cores, state.lam_floor)
    if state.mode == "fixed":
        for tr in state.trackers.values():
            if tr.mean_abs is not None:
                tr.adjust()
    return ce, correct


def prune_ranks(state, rel_threshold=0.01):
    """Drop rank slices whose rank parameter collapsed.

    A slice r of core n is removed when lambda_n(r) falls below
    ``rel_threshold`` times the largest lambda_n; the slice is cut from
    core n's 4th axis, core n+1's 1st axis, the rank parameters and all
    optimizer moments.  Ranks never drop below 1.
    """
    removed = 0
    for ls in state.layers:
        for n in range(len(ls.buffer.cores) - 1):
            lam = np.asarray(ls.lambdas[n])
            keep = lam >= rel_threshold * lam.max()
            if not keep.any():
                keep[np.argmax(lam)] = True
            if keep.all():
                continue
            removed += int((~keep).sum())
            ls.buffer.cores[n] = ls.buffer.cores[n][:, :, :, keep]
            ls.buffer.cores[n + 1] = ls.buffer.cores[n + 1][keep]
            ls.m[n] = ls.m[n][:, :, :, keep]
            ls.m[n + 1] = ls.m[n + 1][keep]
            ls.v[n] = ls.v[n][:, :, :, keep]
            ls.v[n + 1] = ls.v[n + 1][keep]
            ls.lambdas[n] = lam[keep]
        ls.buffer = TTMLayer(ls.buffer.cores, ls.buffer.bias)
        refresh_shadow(ls, state.mode)
    return removed


def evaluate(state, x, labels, batch_size=512, cfg=None):
    """Top-1 accuracy and mean cross-entropy with frozen scale trackers."""
    n = x.shape[0]
    correct = 0
    ce_sum = 0.0
    for start in range(0, n, batch_size):
        xb = np.asarray(x[start:start + batch_size], dtype=np.float64)
        yb = labels[start:start + batch_size]
        logits, _ = network_forward(state, xb, observe=False, cfg=cfg)
        ce, _ = softmax_ce(logits, yb)
        ce_sum += ce * xb.shape[0]
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
    return correct / n, ce_sum / n
