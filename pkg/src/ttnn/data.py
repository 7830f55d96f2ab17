"""IDX dataset ingestion, input padding/factorization and batching."""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

PAD_LEFT = 2
PAD_RIGHT = 2
INPUT_FACTORS = (7, 4, 2, 16)


class IdxFormatError(ValueError):
    """Malformed IDX container."""


@dataclass
class Dataset:
    images: np.ndarray   # (n, 28, 28) uint8
    labels: np.ndarray   # (n,) int64, classes 0-9
    split: str = "train"

    def __len__(self):
        return len(self.labels)


def _read_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _read_idx(path, expect_magic):
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header at byte {len(raw)}")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expect_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header at byte {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims)) if dims else 0
    if len(raw) < header + count:
        raise IdxFormatError(
            f"{path}: truncated payload at byte {len(raw)}, expected {header + count}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return data.reshape(dims)


def load_idx(images_path, labels_path, split="train"):
    images = _read_idx(images_path, IMAGE_MAGIC)
    labels = _read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    if images.size and images.shape[1:] != (28, 28):
        raise IdxFormatError(f"expected 28x28 images, got {images.shape[1:]}")
    return Dataset(images=images, labels=labels.astype(np.int64), split=split)


def prepare(image, pad=(PAD_LEFT, PAD_RIGHT)):
    """Zero-pad one 28x28 image to 28x32, scale to [0, 1), factorize."""
    image = np.asarray(image)
    if image.shape != (28, 28):
        raise ValueError(f"expected a 28x28 image, got {image.shape}")
    padded = np.pad(image.astype(np.float64) / 256.0, ((0, 0), pad))
    return padded.reshape(INPUT_FACTORS)


def prepare_batch(images, pad=(PAD_LEFT, PAD_RIGHT)):
    """Vectorized ``prepare``: (n, 28, 28) -> (n, 896) float32."""
    images = np.asarray(images)
    padded = np.pad(images.astype(np.float32) / 256.0, ((0, 0), (0, 0), pad))
    return padded.reshape(len(images), -1)


def batches(n_samples, batch_size, rng):
    """One epoch of shuffled index batches; the final partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(n_samples)
    for start in range(0, n_samples, batch_size):
        yield order[start:start + batch_size]


def find_split(data_dir, split):
    """Locate the IDX pair for a split, accepting .gz or raw files."""
    data_dir = Path(data_dir)
    prefix = "train" if split == "train" else "t10k"
    paths = []
    for kind in (f"{prefix}-images-idx3-ubyte", f"{prefix}-labels-idx1-ubyte"):
        for cand in (data_dir / kind, data_dir / f"{kind}.gz"):
            if cand.exists():
                paths.append(cand)
                break
        else:
            raise FileNotFoundError(f"no {kind}[.gz] under {data_dir}")
    return tuple(paths)


def load_split(data_dir, split):
    images_path, labels_path = find_split(data_dir, split)
    return load_idx(images_path, labels_path, split=split)
