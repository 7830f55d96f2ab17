"""Run configuration: defaults reproduce the two-layer FashionMNIST setup.

Input images are padded to 28x32 and factorized as 7x4x2x16; the hidden
layer has 512 units factorized 4x4x2x16 (input side 32x16 for layer two)
and the 10-class output is padded to 16 logits (1x16).  Initial ranks are
16 everywhere.
"""

from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class LayerSpec:
    in_dims: list
    out_dims: list
    rank: int = 16

    def ranks(self):
        d = len(self.in_dims)
        return [1] + [self.rank] * (d - 1) + [1]


def default_layers():
    return [
        LayerSpec(in_dims=[7, 4, 2, 16], out_dims=[4, 4, 2, 16], rank=16),
        LayerSpec(in_dims=[32, 16], out_dims=[1, 16], rank=16),
    ]


@dataclass
class RunConfig:
    layers: list = field(default_factory=default_layers)
    precision: str = "fixed"          # "real" | "fixed"
    prior: bool = True
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adam"           # "adam" | "sgd"
    prior_weight: float = 0.0         # 0 = auto: batch_size / (8 * n_train)
    prune_rel_threshold: float = 0.01
    prune_every_epochs: int = 1
    lambda_floor: float = 1e-9
    strict_align: bool = False
    clock_mhz: float = 100.0
    data_dir: str = "data"
    out_dir: str = "runs/default"
    train_limit: int = 0              # 0 = full training set
    pad: list = field(default_factory=lambda: [2, 2])

    def __post_init__(self):
        self.layers = [LayerSpec(**l) if isinstance(l, dict) else l
                       for l in self.layers]
        self.validate()

    def validate(self):
        if self.precision not in ("real", "fixed"):
            raise ConfigError(f"precision must be real or fixed, got {self.precision!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.prior_weight < 0:
            raise ConfigError("prior_weight must be >= 0 (0 selects auto)")
        prev_out = None
        for i, spec in enumerate(self.layers):
            if len(spec.in_dims) != len(spec.out_dims):
                raise ConfigError(f"layer {i}: in_dims and out_dims lengths differ")
            size_in = 1
            for s in spec.in_dims:
                size_in *= s
            if prev_out is not None and size_in != prev_out:
                raise ConfigError(
                    f"layer {i}: input size {size_in} does not match previous "
                    f"output size {prev_out}")
            prev_out = 1
            for s in spec.out_dims:
                prev_out *= s

    def layer_specs(self):
        return [(tuple(s.in_dims), tuple(s.out_dims), tuple(s.ranks()))
                for s in self.layers]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path):
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        try:
            return cls.from_dict(raw)
        except TypeError as exc:
            raise ConfigError(f"bad config {path}: {exc}") from None
