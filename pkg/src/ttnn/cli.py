"""Command-line interface: train, eval, report, simulate."""

import argparse
import sys

import numpy as np

from . import checkpoint, data, pesim, runner, train
from .config import ConfigError, RunConfig
from .data import IdxFormatError
from .pesim import AlignmentError, PEConfig
from .tensor import ShapeError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SHAPE = 4


def _load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for name in ("precision", "epochs", "batch_size", "seed", "data_dir"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "prior", None) is not None:
        cfg.prior = args.prior == "on"
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "strict_align", False):
        cfg.strict_align = True
    if getattr(args, "clock_mhz", None) is not None:
        cfg.clock_mhz = args.clock_mhz
    cfg.validate()
    return cfg


def cmd_train(args):
    cfg = _load_config(args)
    state = runner.build_state(cfg)
    train_x, train_y, test_x, test_y = runner.load_training_data(cfg)
    if args.pretrain:
        pre_cfg_dir, cfg_dir = args.pretrain, cfg.data_dir
        cfg.data_dir = pre_cfg_dir
        pre = runner.load_training_data(cfg)
        cfg.data_dir = cfg_dir
        print(f"pretraining on {pre_cfg_dir} for {cfg.epochs} epochs")
        runner.fit(state, cfg, *pre, out_dir=str(cfg.out_dir) + "/pretrain")
    rows = runner.fit(state, cfg, train_x, train_y, test_x, test_y, cfg.out_dir)
    print(f"wrote {cfg.out_dir}/metrics.csv ({len(rows)} rows), "
          f"best.ckpt and final.ckpt")
    return 0


def cmd_eval(args):
    state = checkpoint.load(args.checkpoint)
    ds = data.load_split(args.data_dir or "data", args.split)
    x = data.prepare_batch(ds.images)
    acc, ce = train.evaluate(state, x, ds.labels)
    print(f"{args.split} accuracy: {acc:.6f} (ce {ce:.6f}, {len(ds)} samples)")
    return 0


def cmd_report(args):
    state = checkpoint.load(args.checkpoint)
    layers = [ls.buffer for ls in state.layers]
    params = sum(l.n_params for l in layers)
    bits = pesim.bram_footprint(layers)
    dense_params = pesim.dense_baseline_params(layers)
    dense_bits = 32 * dense_params
    print(f"model parameters:    {params}")
    print(f"model memory bits:   {bits}")
    print(f"dense parameters:    {dense_params}")
    print(f"dense memory bits:   {dense_bits}")
    print(f"memory reduction:    {dense_bits / bits:.1f}x")
    print(f"ranks:               " + ";".join(
        "-".join(str(r) for r in l.ranks) for l in layers))
    return 0


def cmd_simulate(args):
    cfg = _load_config(args)
    rng = np.random.default_rng(cfg.seed)
    layers = [ls.shadow for ls in runner.build_state(cfg, rng).layers]
    pe_cfg = PEConfig(strict=False)
    batch = args.batch_size if args.batch_size is not None else cfg.batch_size
    model = pesim.estimate_step_cycles(layers, batch, pe_cfg)
    violations = [
        (label, rep) for label, rep in model.rows.items()
        if rep.pe in ("PE1", "PE2") and rep.dims[2] % pe_cfg.c_par != 0
    ]
    strict = cfg.strict_align or not args.no_strict_align
    for label, rep in model.rows.items():
        print(f"{label:24s} {rep.pe}  dims={rep.dims}  cycles={rep.cycles}")
    total = model.total()
    seconds = total.cycles / (cfg.clock_mhz * 1e6)
    print(f"total: {total.cycles} cycles, {total.macs} MACs, "
          f"{total.dram_words} DRAM words")
    print(f"estimated time per batch of {batch}: {seconds:.4f} s "
          f"at {cfg.clock_mhz:.0f} MHz")
    if violations:
        for label, rep in violations:
            print(f"alignment violation at {label}: last dim {rep.dims[2]} "
                  f"is not a multiple of 16", file=sys.stderr)
        if strict:
            return EXIT_SHAPE
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="ttnn",
        description="Rank-adaptive tensor-train network training and simulation")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, train_flags=False):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--data-dir", dest="data_dir")
        sp.add_argument("--precision", choices=["real", "fixed"])
        sp.add_argument("--prior", choices=["on", "off"])
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--strict-align", dest="strict_align", action="store_true")
        sp.add_argument("--clock-mhz", dest="clock_mhz", type=float)

    sp = sub.add_parser("train", help="train a model and write metrics + checkpoints")
    common(sp)
    sp.add_argument("--pretrain", help="IDX directory for a pretraining dataset")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--data-dir", dest="data_dir")
    sp.add_argument("--split", choices=["train", "test"], default="test")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("report", help="memory and compression report")
    sp.add_argument("checkpoint")
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("simulate", help="cycle and traffic estimate for one batch")
    common(sp)
    sp.add_argument("--no-strict-align", action="store_true",
                    help="report alignment violations without failing")
    sp.set_defaults(fn=cmd_simulate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdxFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ShapeError, AlignmentError, checkpoint.CheckpointError) as exc:
        print(f"shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE


if __name__ == "__main__":
    sys.exit(main())
