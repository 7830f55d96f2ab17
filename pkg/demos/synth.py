"""Tiny synthetic 10-class image task shared by the demo scripts.

Ten sparse binary 28x28 templates; each sample is its class template under
random per-pixel illumination plus background noise.  Learnable at very low
precision because the signal is the template's support, not pixel values.
"""

import numpy as np

TEMPLATES = (np.random.default_rng(7).random((10, 28, 28)) > 0.75).astype(float)


def make(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, n)
    images = TEMPLATES[labels] * rng.uniform(100, 255, (n, 28, 28))
    images += rng.uniform(0, 40, (n, 28, 28))
    return np.clip(images, 0, 255).astype(np.uint8), labels.astype(np.int64)
