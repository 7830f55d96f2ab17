"""Epoch loop: batching, pruning schedule, metrics CSV and checkpoints."""

import csv
from pathlib import Path

import numpy as np

from . import checkpoint, data, train
from .train import AdamParams, TrainState


def build_state(cfg, rng=None):
    rng = rng or np.random.default_rng(cfg.seed)
    adam = AdamParams(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                      sgd=cfg.optimizer == "sgd")
    state = train.init_state(cfg.layer_specs(), rng, mode=cfg.precision,
                             prior=cfg.prior, adam=adam,
                             prior_weight=cfg.prior_weight or train.PRIOR_WEIGHT)
    state.lam_floor = cfg.lambda_floor
    return state


def _ranks_str(state):
    return ";".join("-".join(str(r) for r in ranks) for ranks in state.ranks)


def _memory_bits(state):
    from . import pesim
    return pesim.bram_footprint([ls.buffer for ls in state.layers])


def metrics_row(state, epoch, train_acc, test_acc, ce, g):
    return {
        "epoch": epoch,
        "train_acc": f"{train_acc:.6f}",
        "test_acc": f"{test_acc:.6f}",
        "ce": f"{ce:.6f}",
        "prior_g": f"{g:.6f}",
        "ranks": _ranks_str(state),
        "params": state.n_params,
        "memory_bits": _memory_bits(state),
    }


FIELDS = ["epoch", "train_acc", "test_acc", "ce", "prior_g", "ranks",
          "params", "memory_bits"]


def fit(state, cfg, train_x, train_y, test_x, test_y, out_dir, log=print):
    """Train for cfg.epochs, logging one metrics row per epoch.

    Returns the list of metrics rows.  Saves the checkpoint of the best
    test-accuracy epoch as best.ckpt and the latest as final.ckpt.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    if not cfg.prior_weight:
        # Keep the per-epoch shrinkage dose independent of dataset size:
        # about 1/8 of the full penalty gradient integrated per epoch.  The
        # cap keeps the per-step pull gentle on small datasets, where the
        # optimizer would otherwise drift parameters faster than the data
        # gradient can correct.
        state.prior_weight = min(train.PRIOR_WEIGHT,
                                 cfg.batch_size / (8.0 * max(1, len(train_y))))
    rows = []

    def record(epoch):
        train_acc, ce = train.evaluate(state, train_x, train_y)
        test_acc, _ = train.evaluate(state, test_x, test_y)
        g = train.prior_term_state(state) if state.prior else 0.0
        row = metrics_row(state, epoch, train_acc, test_acc, ce, g)
        rows.append(row)
        if log:
            log(f"epoch {epoch}: train {train_acc:.4f} test {test_acc:.4f} "
                f"ce {ce:.4f} ranks {row['ranks']} params {row['params']}")
        return test_acc

    best_acc = record(0)
    checkpoint.save(out_dir / "best.ckpt", state)
    checkpoint.save(out_dir / "final.ckpt", state)
    for epoch in range(1, cfg.epochs + 1):
        for idx in data.batches(len(train_y), cfg.batch_size, rng):
            train.training_step(state, np.asarray(train_x[idx], dtype=np.float64),
                                train_y[idx])
        if state.prior and cfg.prune_every_epochs and epoch % cfg.prune_every_epochs == 0:
            train.prune_ranks(state, cfg.prune_rel_threshold)
        test_acc = record(epoch)
        checkpoint.save(out_dir / "final.ckpt", state)
        if test_acc > best_acc:
            best_acc = test_acc
            checkpoint.save(out_dir / "best.ckpt", state)
    write_metrics(out_dir / "metrics.csv", rows)
    return rows


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def load_training_data(cfg):
    train_ds = data.load_split(cfg.data_dir, "train")
    test_ds = data.load_split(cfg.data_dir, "test")
    pad = tuple(cfg.pad)
    train_x = data.prepare_batch(train_ds.images, pad)
    train_y = train_ds.labels
    if cfg.train_limit:
        train_x = train_x[:cfg.train_limit]
        train_y = train_y[:cfg.train_limit]
    test_x = data.prepare_batch(test_ds.images, pad)
    return train_x, train_y, test_x, test_ds.labels
