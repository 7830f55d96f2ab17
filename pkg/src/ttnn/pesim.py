"""Functional model of the three processing elements plus cost accounting.

PE1 contracts two trailing indices, PE2 contracts a single middle index,
PE3 streams outer products.  Each kernel is element-exact (the functional
semantics are checked against ``ttnn.tensor.contract``) and can fill in a
:class:`CostReport` with MAC counts, a cycle estimate and DRAM traffic.

The cycle model: one MAC wave per cycle at full pipelining with ceil
division on the parallelized axes, lower-bounded by DRAM transfer at 16
words per cycle, plus a first-slice fill / last-slice drain that ping-pong
buffering cannot hide.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import _check_int_bounds, prod


class AlignmentError(ValueError):
    """Strict-hardware-mode shape rule violated (last dim % 16)."""


@dataclass(frozen=True)
class PEConfig:
    total_macs: int = 128
    c_par: int = 16          # parallel lanes along the trailing index c
    second_par: int = 8      # parallel lanes along a (PE1) or d (PE2)
    pe3_lanes: int = 16
    bus_words: int = 16      # DRAM words moved per cycle
    strict: bool = False

    def __post_init__(self):
        if self.c_par * self.second_par != self.total_macs:
            raise ValueError("c_par * second_par must equal total_macs")


DEFAULT_CONFIG = PEConfig()


@dataclass
class CostReport:
    macs: int = 0
    cycles: int = 0
    dram_words: int = 0
    bram_bits: int = 0
    pe: str = ""
    dims: tuple = ()
    bandwidth_bound: bool = False

    def merge(self, other):
        self.macs += other.macs
        self.cycles += other.cycles
        self.dram_words += other.dram_words
        self.bram_bits += other.bram_bits
        return self


class CostModel:
    """Ordered collection of per-step cost reports."""

    def __init__(self):
        self.rows = {}

    def add(self, label, report):
        if label in self.rows:
            self.rows[label].merge(report)
        else:
            self.rows[label] = report

    def sink(self, prefix):
        return lambda label, report: self.add(f"{prefix}/{label}", report)

    def total(self):
        out = CostReport()
        for rep in self.rows.values():
            out.merge(rep)
        return out


def _ceil(a, b):
    return -(-a // b)


def _maybe_int_guard(z, g, n_terms):
    if np.issubdtype(z.dtype, np.integer) and np.issubdtype(g.dtype, np.integer):
        _check_int_bounds(z, g, n_terms)
        return z.astype(np.int64, copy=False), g.astype(np.int64, copy=False)
    return z, g


def pe1_cost(a, b, c, d, cfg=DEFAULT_CONFIG):
    macs = a * b * c * d
    waves = _ceil(a, cfg.second_par) * b * d * _ceil(c, cfg.c_par)
    dram = a * b * c + a * d
    fill = _ceil(b * c, cfg.bus_words) + _ceil(d, cfg.bus_words)
    cycles = max(waves, _ceil(dram, cfg.bus_words)) + fill
    return CostReport(macs=macs, cycles=cycles, dram_words=dram,
                      pe="PE1", dims=(a, b, c, d))


def pe2_cost(a, b, c, d, cfg=DEFAULT_CONFIG):
    macs = a * b * c * d
    waves = a * b * _ceil(d, cfg.second_par) * _ceil(c, cfg.c_par)
    dram = a * b * c + a * d * c
    fill = _ceil(b * c, cfg.bus_words) + _ceil(d * c, cfg.bus_words)
    cycles = max(waves, _ceil(dram, cfg.bus_words)) + fill
    return CostReport(macs=macs, cycles=cycles, dram_words=dram,
                      pe="PE2", dims=(a, b, c, d))


def pe3_cost(n_out, n_in, cfg=DEFAULT_CONFIG, samples=1):
    # Throughput is bounded by storing the product stream to DRAM.
    macs = samples * n_out * n_in
    cycles = samples * _ceil(n_out * n_in, cfg.pe3_lanes)
    dram = samples * (n_out + n_in + n_out * n_in)
    return CostReport(macs=macs, cycles=cycles, dram_words=dram,
                      pe="PE3", dims=(samples, n_out, n_in),
                      bandwidth_bound=True)


def pe1(zk, gl, cfg=None, report=None):
    """``out(a, d) = sum_{b, c} zk(a, b, c) * gl(b, d, c)``."""
    cfg = cfg or DEFAULT_CONFIG
    zk = np.asarray(zk)
    gl = np.asarray(gl)
    if zk.ndim != 3 or gl.ndim != 3:
        raise AlignmentError(f"pe1 expects 3-way operands, got {zk.shape} and {gl.shape}")
    a, b, c = zk.shape
    if gl.shape[0] != b or gl.shape[2] != c:
        raise AlignmentError(f"pe1 operand mismatch: {zk.shape} vs {gl.shape}")
    d = gl.shape[1]
    if cfg.strict and c % cfg.c_par != 0:
        raise AlignmentError(f"pe1 last dimension c={c} is not a multiple of {cfg.c_par}")
    zk, gl = _maybe_int_guard(zk, gl, b * c)
    out = np.einsum("abc,bdc->ad", zk, gl)
    if report is not None:
        report.merge(pe1_cost(a, b, c, d, cfg))
        report.pe, report.dims = "PE1", (a, b, c, d)
    return out


def pe2(zk, gl, cfg=None, report=None):
    """``out(a, d, c) = sum_b zk(a, b, c) * gl(b, d)``."""
    cfg = cfg or DEFAULT_CONFIG
    zk = np.asarray(zk)
    gl = np.asarray(gl)
    if zk.ndim != 3 or gl.ndim != 2:
        raise AlignmentError(f"pe2 expects (3, 2)-way operands, got {zk.shape} and {gl.shape}")
    a, b, c = zk.shape
    if gl.shape[0] != b:
        raise AlignmentError(f"pe2 operand mismatch: {zk.shape} vs {gl.shape}")
    d = gl.shape[1]
    if cfg.strict and c % cfg.c_par != 0:
        raise AlignmentError(f"pe2 last dimension c={c} is not a multiple of {cfg.c_par}")
    zk, gl = _maybe_int_guard(zk, gl, b)
    out = np.einsum("abc,bd->adc", zk, gl)
    if report is not None:
        report.merge(pe2_cost(a, b, c, d, cfg))
        report.pe, report.dims = "PE2", (a, b, c, d)
    return out


def pe3(x_row, gy_row, cfg=None, report=None, accum=None):
    """Per-sample outer product ``x_row (x) gy_row``, streamed into ``accum``."""
    cfg = cfg or DEFAULT_CONFIG
    x_row = np.asarray(x_row)
    gy_row = np.asarray(gy_row)
    if cfg.strict:
        last = gy_row.shape[-1] if gy_row.ndim else x_row.shape[-1]
        if last % cfg.pe3_lanes != 0:
            raise AlignmentError(
                f"pe3 result last dimension {last} is not a multiple of {cfg.pe3_lanes}")
    out = np.tensordot(x_row, gy_row, axes=0)
    if report is not None:
        report.merge(pe3_cost(x_row.size, gy_row.size, cfg))
    if accum is not None:
        accum += out
        return accum
    return out


def pe3_batch(x, gy, cfg=None, report=None):
    """Batch-accumulated outer products: ``out(q, p) = sum_n gy(n, q) x(n, p)``."""
    cfg = cfg or DEFAULT_CONFIG
    x = np.asarray(x)
    gy = np.asarray(gy)
    n = x.shape[0]
    if gy.shape[0] != n:
        raise AlignmentError(f"pe3 batch mismatch: {x.shape} vs {gy.shape}")
    out = gy.T @ x
    if report is not None:
        report.merge(pe3_cost(gy.shape[1], x.shape[1], cfg, samples=n))
        report.pe, report.dims = "PE3", (n, gy.shape[1], x.shape[1])
        report.bandwidth_bound = True
    return out


def n_factor_params(layers):
    return sum(sum(core.size for core in layer.cores) for layer in layers)


def n_bias_params(layers):
    return sum(layer.bias.size for layer in layers)


def n_rank_params(layers):
    return sum(sum(layer.ranks[1:-1]) for layer in layers)


def bram_footprint(layers, factor_bits=4, bias_bits=8, lambda_bits=16,
                   include_rank_params=False):
    """On-chip parameter storage in bits for a list of TTM layers.

    Rank-controlling parameters live on the high-precision side and are
    excluded by default; pass ``include_rank_params=True`` to count them
    at ``lambda_bits`` each.
    """
    bits = factor_bits * n_factor_params(layers) + bias_bits * n_bias_params(layers)
    if include_rank_params:
        bits += lambda_bits * n_rank_params(layers)
    return bits


def dense_baseline_params(layers):
    """Parameter count of the uncompressed dense layers (weights + bias)."""
    return sum(l.in_size * l.out_size + l.out_size for l in layers)


def estimate_step_cycles(layers, batch_size, cfg=None):
    """Cost of one forward + backward pass over a batch.

    Runs the actual contraction chains on zero-filled operands so the
    accounting can never drift from the compute path.  Returns a
    :class:`CostModel` keyed by layer / phase / contraction step.
    """
    from . import ttm  # deferred: ttm dispatches onto this module

    cfg = cfg or DEFAULT_CONFIG
    model = CostModel()
    if batch_size == 0:
        return model
    acts = [np.zeros((batch_size, layers[0].in_size))]
    x = acts[0]
    for i, layer in enumerate(layers):
        eng = ttm.Engine(cfg, cost_sink=model.sink(f"L{i}/fwd"))
        x = ttm.forward(layer, x, eng)
        acts.append(x)
    gy = np.zeros((batch_size, layers[-1].out_size))
    for i in reversed(range(len(layers))):
        layer = layers[i]
        eng = ttm.Engine(cfg, cost_sink=model.sink(f"L{i}/bwd"))
        w_hat = ttm.grad_full_weight(layer, acts[i], gy, eng)
        ttm.grad_factors(layer, w_hat, eng)
        if i > 0:
            gy = ttm.backward_input(layer, gy, eng)
    return model
