"""Shared fixtures: random layers, synthetic IDX datasets, tiny helpers."""

import gzip
import struct

import numpy as np
import pytest

from ttnn.ttm import TTMLayer

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_layer(rng, d=None, max_dim=4, max_rank=4):
    """Random small TTM layer with d in 2..4, dims <= max_dim, ranks <= max_rank."""
    d = d or int(rng.integers(2, 5))
    in_dims = tuple(int(v) for v in rng.integers(1, max_dim + 1, d))
    out_dims = tuple(int(v) for v in rng.integers(1, max_dim + 1, d))
    ranks = (1,) + tuple(int(v) for v in rng.integers(1, max_rank + 1, d - 1)) + (1,)
    layer = TTMLayer.random(in_dims, out_dims, ranks, rng)
    layer.bias = rng.normal(0.0, 0.5, layer.out_size)
    return layer


# --- synthetic classification task -----------------------------------------
#
# Ten sparse binary 28x28 templates; each sample is its class template under
# random per-pixel illumination plus background noise.  Shape-based, like the
# clothing dataset the default network targets, and learnable at low precision.

_TEMPLATES = (np.random.default_rng(7).random((10, 28, 28)) > 0.75).astype(np.float64)


def synth_images(n, seed, label_noise=0.0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, n)
    images = _TEMPLATES[labels] * rng.uniform(100, 255, (n, 28, 28))
    images += rng.uniform(0, 40, (n, 28, 28))
    labels = labels.copy()
    if label_noise:
        flip = rng.random(n) < label_noise
        labels[flip] = rng.integers(0, 10, int(flip.sum()))
    return np.clip(images, 0, 255).astype(np.uint8), labels.astype(np.int64)


def write_idx_images(path, images, compress=False):
    images = np.asarray(images, dtype=np.uint8)
    raw = struct.pack(">IIII", IMAGE_MAGIC, *images.shape) + images.tobytes()
    _write(path, raw, compress)


def write_idx_labels(path, labels, compress=False):
    labels = np.asarray(labels, dtype=np.uint8)
    raw = struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes()
    _write(path, raw, compress)


def _write(path, raw, compress):
    data = gzip.compress(raw) if compress else raw
    with open(path, "wb") as fh:
        fh.write(data)


def write_idx_dir(dirpath, n_train=512, n_test=128, seed=0, compress=True):
    """Write a train/t10k IDX pair under ``dirpath``; returns (train, test) arrays."""
    suffix = ".gz" if compress else ""
    tr = synth_images(n_train, seed)
    te = synth_images(n_test, seed + 1)
    write_idx_images(dirpath / f"train-images-idx3-ubyte{suffix}", tr[0], compress)
    write_idx_labels(dirpath / f"train-labels-idx1-ubyte{suffix}", tr[1], compress)
    write_idx_images(dirpath / f"t10k-images-idx3-ubyte{suffix}", te[0], compress)
    write_idx_labels(dirpath / f"t10k-labels-idx1-ubyte{suffix}", te[1], compress)
    return tr, te
