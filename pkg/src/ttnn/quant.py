"""Fixed-point formats, quantization, surrogate gradients and scale tracking.

A fixed-point value is ``code * 2**step_exp`` where ``code`` is a signed
``bits``-wide integer.  All scales are exact powers of two, so quantized
values are exactly representable in float64 and arithmetic on them stays
exact until a deliberate re-quantization step.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FixedFormat:
    """Signed fixed-point format: word width and power-of-two step."""

    bits: int
    step_exp: int

    def __post_init__(self):
        if self.bits < 2:
            raise ValueError("need at least 2 bits for a signed format")

    @property
    def step(self):
        return 2.0 ** self.step_exp

    @property
    def min_code(self):
        return -(2 ** (self.bits - 1))

    @property
    def max_code(self):
        return 2 ** (self.bits - 1) - 1

    @property
    def min_value(self):
        return self.min_code * self.step

    @property
    def max_value(self):
        return self.max_code * self.step


def quantize(x, fmt):
    """Map real values to integer codes: round-half-to-even, then saturate."""
    codes = np.rint(np.asarray(x, dtype=np.float64) / fmt.step)
    return np.clip(codes, fmt.min_code, fmt.max_code).astype(np.int64)


def dequantize(codes, fmt):
    return np.asarray(codes, dtype=np.float64) * fmt.step


def quantize_value(x, fmt):
    """Quantize and return the representable value (codes * step)."""
    return dequantize(quantize(x, fmt), fmt)


def ste_quant_grad(upstream, x, fmt):
    """Straight-through gradient of the quantizer: clipped identity.

    Passes ``upstream`` where ``x`` lies inside the representable range of
    ``fmt`` and zeroes it outside.
    """
    x = np.asarray(x, dtype=np.float64)
    mask = (x >= fmt.min_value) & (x <= fmt.max_value)
    return np.asarray(upstream, dtype=np.float64) * mask


def relu_backward(upstream, x):
    """Backprop rule for ReLU: pass upstream where the input was >= 0."""
    mask = np.asarray(x, dtype=np.float64) >= 0.0
    return np.asarray(upstream, dtype=np.float64) * mask


def auto_step_exp(values, bits, target=0.2):
    """Step exponent that puts mean(|code|) / 2**(bits-1) near ``target``."""
    m = float(np.mean(np.abs(values))) if np.size(values) else 0.0
    if m == 0.0:
        return -(bits - 1)
    return round(math.log2(m / (target * 2 ** (bits - 1))))


def factor_step_exp(values, bits, headroom=0.75):
    """Step exponent so the largest entry uses about ``headroom`` of range."""
    m = float(np.max(np.abs(values))) if np.size(values) else 0.0
    max_code = 2 ** (bits - 1) - 1
    if m == 0.0:
        return -(bits - 1)
    return math.ceil(math.log2(m / (headroom * max_code)))


class ScaleTracker:
    """Running mean of |code| / 2**(bits-1), adjusted one step per batch.

    One tracker per named tensor per layer; scales are never per element.
    The tracked mean is kept in [0.1, 0.3] by nudging ``step_exp`` by at
    most one per :meth:`adjust` call.  Adjusting also renormalizes the
    stored mean, since a step change halves or doubles future codes.
    """

    LOW = 0.1
    HIGH = 0.3

    def __init__(self, bits, step_exp, momentum=0.9):
        self.bits = bits
        self.step_exp = step_exp
        self.momentum = momentum
        self.mean_abs = None

    @property
    def fmt(self):
        return FixedFormat(self.bits, self.step_exp)

    def observe(self, codes):
        m = float(np.mean(np.abs(codes))) / 2 ** (self.bits - 1)
        if self.mean_abs is None:
            self.mean_abs = m
        else:
            self.mean_abs = self.momentum * self.mean_abs + (1 - self.momentum) * m

    def adjust(self):
        if self.mean_abs is None:
            raise ValueError("adjust() before any observation")
        if self.mean_abs > self.HIGH:
            self.step_exp += 1
            self.mean_abs /= 2.0
        elif self.mean_abs < self.LOW:
            # also covers an all-zero observation: a step too coarse to
            # produce any nonzero code must still get finer to recover
            self.step_exp -= 1
            self.mean_abs *= 2.0
        return self
