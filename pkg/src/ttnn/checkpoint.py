"""Binary checkpoint format.

Layout (all little-endian unless noted):

* magic ``TTNNCKPT`` (8 bytes), version byte, mode byte (0 real / 1 fixed),
  prior byte, layer count byte.
* Per layer: d (u8); input dims (u16 * d); output dims (u16 * d); ranks
  (u16 * (d+1)); per-factor step exponents (i8 * d); bias step exponent
  (i8); factor buffers as float32; shadow factor codes packed at 4 bits
  (two per byte, low nibble first); bias as float32; shadow bias codes as
  i8; rank-parameter vectors as float32.
* Trailer: scale-tracker count (u16), then per tracker key length (u16),
  utf-8 key, bits (u8), step exponent (i8), running mean (float32).
"""

import struct
from pathlib import Path

import numpy as np

from .quant import FixedFormat, ScaleTracker, quantize
from .train import (ACT_BITS, FACTOR_BITS, LayerState, TrainState,
                    update_lambda)
from .ttm import TTMLayer

MAGIC = b"TTNNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_nibbles(codes):
    codes = np.asarray(codes, dtype=np.int64).ravel()
    nibbles = (codes & 0xF).astype(np.uint8)
    if len(nibbles) % 2:
        nibbles = np.append(nibbles, np.uint8(0))
    return (nibbles[0::2] | (nibbles[1::2] << 4)).tobytes()


def _unpack_nibbles(buf, count):
    packed = np.frombuffer(buf, dtype=np.uint8)
    nibbles = np.empty(len(packed) * 2, dtype=np.uint8)
    nibbles[0::2] = packed & 0xF
    nibbles[1::2] = packed >> 4
    codes = nibbles[:count].astype(np.int64)
    codes[codes >= 8] -= 16  # sign-extend 4-bit
    return codes


def save(path, state):
    out = bytearray()
    out += MAGIC
    out += struct.pack("<BBBB", VERSION, 1 if state.mode == "fixed" else 0,
                       1 if state.prior else 0, len(state.layers))
    for ls in state.layers:
        buf = ls.buffer
        d = buf.d
        out += struct.pack("<B", d)
        out += struct.pack(f"<{d}H", *buf.in_dims)
        out += struct.pack(f"<{d}H", *buf.out_dims)
        out += struct.pack(f"<{d + 1}H", *buf.ranks)
        out += struct.pack(f"<{d}b", *(f.step_exp for f in ls.factor_fmts))
        out += struct.pack("<b", ls.bias_fmt.step_exp)
        for core in buf.cores:
            out += core.astype("<f4").tobytes()
        for core, fmt in zip(buf.cores, ls.factor_fmts):
            out += _pack_nibbles(quantize(core, fmt))
        out += buf.bias.astype("<f4").tobytes()
        out += quantize(buf.bias, ls.bias_fmt).astype("<i1").tobytes()
        for lam in ls.lambdas:
            out += np.asarray(lam).astype("<f4").tobytes()
    out += struct.pack("<H", len(state.trackers))
    for key, tr in state.trackers.items():
        kb = key.encode()
        out += struct.pack("<H", len(kb)) + kb
        out += struct.pack("<Bb f", tr.bits, tr.step_exp,
                           0.0 if tr.mean_abs is None else tr.mean_abs)
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path):
    rd = _Reader(Path(path).read_bytes())
    if rd.take(8) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    version, mode_b, prior_b, n_layers = rd.unpack("<BBBB")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    mode = "fixed" if mode_b else "real"
    layers = []
    for _ in range(n_layers):
        (d,) = rd.unpack("<B")
        in_dims = rd.unpack(f"<{d}H")
        out_dims = rd.unpack(f"<{d}H")
        ranks = rd.unpack(f"<{d + 1}H")
        step_exps = rd.unpack(f"<{d}b")
        (bias_exp,) = rd.unpack("<b")
        cores = []
        for n in range(d):
            shape = (ranks[n], out_dims[n], in_dims[n], ranks[n + 1])
            count = int(np.prod(shape))
            cores.append(np.frombuffer(rd.take(4 * count), dtype="<f4")
                         .astype(np.float64).reshape(shape))
        shadow_cores = []
        for n in range(d):
            count = cores[n].size
            codes = _unpack_nibbles(rd.take((count + 1) // 2), count)
            shadow_cores.append(
                (codes * 2.0 ** step_exps[n]).reshape(cores[n].shape))
        out_size = int(np.prod(out_dims))
        bias = np.frombuffer(rd.take(4 * out_size), dtype="<f4").astype(np.float64)
        bias_codes = np.frombuffer(rd.take(out_size), dtype="<i1").astype(np.int64)
        lambdas = []
        for n in range(d - 1):
            lambdas.append(np.frombuffer(rd.take(4 * ranks[n + 1]), dtype="<f4")
                           .astype(np.float64))
        buffer = TTMLayer(cores, bias)
        ls = LayerState(
            buffer=buffer, shadow=buffer,
            lambdas=lambdas if lambdas else update_lambda(cores),
            factor_fmts=[FixedFormat(FACTOR_BITS, e) for e in step_exps],
            bias_fmt=FixedFormat(ACT_BITS, bias_exp),
        )
        if mode == "fixed":
            # use the stored codes so evaluation matches training exactly
            ls.shadow = TTMLayer(shadow_cores, bias_codes * 2.0 ** bias_exp)
        layers.append(ls)
    state = TrainState(layers=layers, mode=mode, prior=bool(prior_b))
    (n_trackers,) = rd.unpack("<H")
    for _ in range(n_trackers):
        (klen,) = rd.unpack("<H")
        key = rd.take(klen).decode()
        bits, step_exp, mean = rd.unpack("<Bb f")
        tr = ScaleTracker(bits, step_exp)
        tr.mean_abs = None if mean == 0.0 else float(mean)
        state.trackers[key] = tr
    return state
