"""Automatic rank selection: the shrinkage prior prunes its own model.

Each rank slice of each core gets a rank parameter (a Gaussian prior
variance) updated in closed form from the slice's norm every step.  Slices
whose parameter collapses carry no signal and are removed, shrinking the
shared rank between adjacent cores.  Watch the ranks fall while accuracy
holds on a synthetic task.
"""

import numpy as np

from ttnn import data, train
from ttnn.config import RunConfig
from ttnn.runner import build_state
from ttnn.train import prune_ranks, training_step

from synth import make

images, labels = make(4000, seed=3)
x = data.prepare_batch(images)

cfg = RunConfig(precision="real", prior=True, prior_weight=2e-3)
state = build_state(cfg)
order = np.random.default_rng(0)
params0 = state.n_params

print(f"initial ranks {state.ranks}, {params0} parameters\n")
for epoch in range(5):
    for idx in data.batches(len(labels), 64, order):
        training_step(state, np.asarray(x[idx], np.float64), labels[idx])
    removed = prune_ranks(state, cfg.prune_rel_threshold)
    acc, ce = train.evaluate(state, x, labels)
    print(f"epoch {epoch + 1}: acc {acc:.3f}, ce {ce:.3f}, "
          f"pruned {removed:2d} slices, ranks {state.ranks}, "
          f"params {state.n_params}")

print(f"\nparameters: {params0} -> {state.n_params} "
      f"({1 - state.n_params / params0:.0%} smaller), accuracy kept")

# the surviving rank parameters, largest first — pruning removed the tail
lam = np.sort(state.layers[0].lambdas[0])[::-1]
print("layer-1 rank parameters after training:",
      ", ".join(f"{v:.4f}" for v in lam))
