"""Training with 4-bit weights: full-precision buffer, quantized shadow.

The optimizer always updates a high-precision parameter buffer; the
forward and backward passes see only its quantized image (4-bit factors,
8-bit activations, 16-bit gradients, all with power-of-two scales).  This
script trains the same small network in real and fixed precision on a
synthetic 10-class task and compares the two.
"""

import numpy as np

from ttnn import data, train
from ttnn.train import init_state, training_step

from synth import make

SPECS = [((7, 4, 2, 16), (4, 4, 2, 16), (1, 8, 8, 8, 1)),
         ((32, 16), (1, 16), (1, 8, 1))]

images, labels = make(2000, seed=1)
x = data.prepare_batch(images)
test_images, test_labels = make(500, seed=2)
tx = data.prepare_batch(test_images)

for mode in ("real", "fixed"):
    state = init_state(SPECS, np.random.default_rng(0), mode=mode, prior=False)
    order = np.random.default_rng(0)
    print(f"--- {mode} mode ({state.n_params} parameters) ---")
    for epoch in range(3):
        ce_sum = n = 0
        for idx in data.batches(len(labels), 64, order):
            ce, _ = training_step(state, np.asarray(x[idx], np.float64),
                                  labels[idx])
            ce_sum += ce * len(idx)
            n += len(idx)
        acc, _ = train.evaluate(state, tx, test_labels)
        print(f"epoch {epoch + 1}: train ce {ce_sum / n:.3f}, "
              f"test acc {acc:.3f}")
    if mode == "fixed":
        fmts = state.layers[0].factor_fmts
        print(f"layer-1 factor scales: " +
              ", ".join(f"2^{f.step_exp}" for f in fmts))
    print()
