"""Command-line interface: data generation, training, inference, evaluation,
ablation sweeps.

Every command exits 0 on success; failures print one `error: <Kind>: <detail>`
line to stderr and exit 1. All outputs are deterministic given the seeds in
the config.
"""
import os

# honor the thread cap before numpy initializes its BLAS pools
_threads = os.environ.get("MN_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import sys

import numpy as np

from .ablation import ablation_run, build_clips, eval_checkpoint, split_train_val
from .config import (
    Config,
    ConfigError,
    default_config,
    parse_overrides,
    read_config,
    serialize_config,
    validate_config,
)
from .evaluate import EvalReport
from .inference import infer, summary_csv, write_inference
from .model import MotionNet
from .nn import CheckpointError, ShapeError
from .sim import CATEGORY_NAMES, ClipFormatError, ClipPair, SimulationError, read_clip, write_clip
from .train import train


def _load_config(path, sets=None) -> Config:
    cfg = read_config(path) if path else default_config()
    if sets:
        pairs = {}
        for item in sets:
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"--set takes key=value, got {item!r}")
            pairs[key.strip()] = value.strip()  # repeated keys: last one wins
        cfg = parse_overrides(pairs, cfg)
    return cfg


def load_dataset(data_dir: str) -> list:
    """Read every .mnclip in a directory, joining `*_a` / `*_b` stems into
    pairs (the a->b ego transform is reconstructed from the stored poses)."""
    try:
        names = sorted(n for n in os.listdir(data_dir) if n.endswith(".mnclip"))
    except OSError as e:
        raise ClipFormatError(f"{data_dir}: {e.strerror or e}") from e
    if not names:
        raise ClipFormatError(f"{data_dir}: no .mnclip files")
    singles = {}
    for name in names:
        singles[name[: -len(".mnclip")]] = read_clip(os.path.join(data_dir, name))
    out = []
    for stem in sorted(singles):
        if stem.endswith("_b"):
            continue
        if stem.endswith("_a"):
            other = stem[:-2] + "_b"
            if other not in singles:
                raise ClipFormatError(f"{data_dir}: {stem}.mnclip has no _b partner")
            a, b = singles[stem], singles[other]
            pose_a = a.ego_poses[a.current_index]
            pose_b = b.ego_poses[b.current_index]
            out.append(ClipPair(a, b, np.linalg.inv(pose_b) @ pose_a))
        else:
            out.append(singles[stem])
    return out


def _write_report(text: str, target: str) -> None:
    if target == "-":
        sys.stdout.write(text)
    else:
        with open(target, "w") as f:
            f.write(text)


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config, args.set)
    if args.seed is not None:
        cfg = parse_overrides({"data.seed": str(args.seed)}, cfg)
    os.makedirs(args.out, exist_ok=True)
    clips = build_clips(cfg, cfg.data.n_clips, cfg.data.seed)
    for i, c in enumerate(clips):
        if isinstance(c, ClipPair):
            write_clip(os.path.join(args.out, f"clip_{i:04d}_a.mnclip"), c.a)
            write_clip(os.path.join(args.out, f"clip_{i:04d}_b.mnclip"), c.b)
        else:
            write_clip(os.path.join(args.out, f"clip_{i:04d}.mnclip"), c)
    kind = "clip pairs" if cfg.data.paired else "clips"
    print(f"wrote {len(clips)} {kind} to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.set)
    validate_config(cfg)
    clips = load_dataset(args.data)
    train_clips, val_clips = split_train_val(clips, cfg.train.val_fraction)
    result = train(
        cfg.model,
        cfg.grid,
        train_clips,
        val_clips,
        args.out,
        weights=cfg.loss,
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        lr=cfg.train.lr,
        mgda=cfg.train.mgda,
        compensate=cfg.train.compensate,
        seed=cfg.train.seed,
        auto_weights=cfg.train.auto_weights,
    )
    print(
        f"checkpoint {result.ckpt_path} best_epoch {result.best_epoch} "
        f"val_metric {result.best_metric:.6g} log {result.log_path}"
    )
    return 0


def cmd_infer(args) -> int:
    cfg = _load_config(args.config, args.set)
    model, grid = MotionNet.load(args.ckpt)
    if grid is None:
        grid = cfg.grid
    clip = read_clip(args.clip)
    out = infer(
        model, clip, grid,
        theta_static=cfg.infer.theta_static,
        suppress=cfg.infer.suppress,
        mode=cfg.train.compensate,
    )
    write_inference(args.out, out)
    csv_path = os.path.splitext(args.out)[0] + ".csv"
    with open(csv_path, "w") as f:
        f.write(summary_csv(out, CATEGORY_NAMES if out.n_categories == len(CATEGORY_NAMES) else None))
    print(f"wrote {args.out} and {csv_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config, args.set)
    clips = load_dataset(args.data)
    report = eval_checkpoint(args.ckpt, cfg, clips=clips)
    label = os.path.basename(args.ckpt)
    text = EvalReport.csv_header(cfg.model.categories) + "\n" + report.csv_row(label) + "\n"
    _write_report(text, args.report)
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config, args.set)
    try:
        with open(args.matrix) as f:
            matrix_text = f.read()
    except OSError as e:
        raise ConfigError(f"{args.matrix}: {e.strerror or e}") from e
    csv_text, _ = ablation_run(cfg, matrix_text, workdir=args.workdir)
    _write_report(csv_text, args.report)
    return 0


def cmd_show_config(args) -> int:
    sys.stdout.write(serialize_config(_load_config(args.config, args.set)))
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="motionnet",
        description="BEV motion-grid perception on synthetic LiDAR scenes",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate clip files from seeded scenarios")
    g.add_argument("--config", help="config file (defaults apply when omitted)")
    g.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, help="override data.seed")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a clip directory")
    t.add_argument("--config", help="config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    t.add_argument("--data", required=True, help="directory of .mnclip files")
    t.add_argument("--out", required=True, help="output directory for checkpoint and log")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="run one clip through a checkpoint")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--clip", required=True)
    i.add_argument("--out", required=True, help="binary dump path; a .csv summary lands next to it")
    i.add_argument("--config", help="config file (thresholds; grid fallback)")
    i.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score a checkpoint over a clip directory")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="CSV path, or - for stdout")
    e.add_argument("--config", help="config file")
    e.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train+evaluate a matrix of config overrides")
    a.add_argument("--config", help="base config file")
    a.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    a.add_argument("--matrix", required=True, help="matrix file of base./sweep. lines")
    a.add_argument("--report", required=True, help="CSV path, or - for stdout")
    a.add_argument("--workdir", help="keep per-cell checkpoints here instead of a temp dir")
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("show-config", help="print the effective configuration")
    s.add_argument("--config", help="config file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    s.set_defaults(func=cmd_show_config)

    return p


_KNOWN_ERRORS = (
    ConfigError,
    CheckpointError,
    ClipFormatError,
    SimulationError,
    ShapeError,
    ValueError,
    RuntimeError,
    OSError,
)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except _KNOWN_ERRORS as e:
        detail = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
