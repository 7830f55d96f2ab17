"""What the accelerator would do: cycle, traffic and memory estimates.

Every contraction in the forward/backward chain maps onto one of three
processing elements (128 multiply-accumulate units, 16-lane vectors).
The cost model walks the full chain for one training step and reports
cycles per stage, DRAM traffic, and the on-chip memory footprint of the
compressed model against its dense baseline.
"""

import numpy as np

from ttnn import pesim
from ttnn.config import RunConfig
from ttnn.runner import build_state

state = build_state(RunConfig())
layers = [ls.buffer for ls in state.layers]

model = pesim.estimate_step_cycles(layers, batch_size=64)
print("per-stage costs for one batch of 64 (forward + backward):")
for label, rep in model.rows.items():
    flag = "  <- DRAM-bound" if rep.bandwidth_bound else ""
    print(f"  {label:24s} {rep.pe}  {rep.cycles:>9d} cycles{flag}")

total = model.total()
print(f"\ntotal: {total.cycles} cycles, {total.macs} MACs, "
      f"{total.dram_words} DRAM words")
print(f"at 100 MHz: {total.cycles / 1e8:.4f} s per batch")
print(f"MAC-array utilization: {total.macs / (128 * total.cycles):.0%}\n")

bits = pesim.bram_footprint(layers)
dense = pesim.dense_baseline_params(layers)
print(f"model:  {sum(l.n_params for l in layers)} parameters, {bits} bits "
      f"(4-bit factors + 8-bit bias)")
print(f"dense:  {dense} parameters, {32 * dense} bits (float32)")
print(f"memory reduction: {32 * dense / bits:.0f}x")
