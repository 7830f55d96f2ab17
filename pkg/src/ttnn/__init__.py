"""Rank-adaptive tensor-train network training with low-precision arithmetic.

Submodules:

* ``tensor`` — dense arrays, reshape/contract/outer oracle
* ``quant`` — fixed-point formats, quantizer, STE, scale tracking
* ``ttm`` — TT-matrix layers and contraction schedules
* ``pesim`` — PE kernels with cycle/memory cost model
* ``train`` — shrinkage prior, rank pruning, buffered low-precision SGD
* ``data`` — IDX parsing, padding/factorization, batching
* ``runner`` / ``cli`` — epoch loop, metrics, command-line entry points
"""

from .quant import FixedFormat, ScaleTracker, quantize, dequantize
from .ttm import TTMLayer, Engine, forward, backward_input, grad_factors, \
    grad_full_weight, materialize_weight, dispatch
from .pesim import PEConfig, CostReport, pe1, pe2, pe3, bram_footprint, \
    estimate_step_cycles
from .train import TrainState, training_step, prune_ranks, prior_term, \
    update_lambda, evaluate
from .config import RunConfig

__all__ = [
    "FixedFormat", "ScaleTracker", "quantize", "dequantize",
    "TTMLayer", "Engine", "forward", "backward_input", "grad_factors",
    "grad_full_weight", "materialize_weight", "dispatch",
    "PEConfig", "CostReport", "pe1", "pe2", "pe3", "bram_footprint",
    "estimate_step_cycles",
    "TrainState", "training_step", "prune_ranks", "prior_term",
    "update_lambda", "evaluate",
    "RunConfig",
]

__version__ = "0.1.0"
