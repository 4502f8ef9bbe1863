"""Cross-product ablation harness.

A matrix file lists fixed overrides and swept keys on top of a base config:

    # comparison of temporal fusion points
    base.train.epochs = 8
    sweep.model.fusion = early | middle | late
    sweep.model.frames = 2, 3, 4, 5

Every combination of sweep values trains a fresh model on freshly generated
clips (seeds shared across cells, so two cells differ only by their
overrides) and contributes one evaluation row to the report CSV.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from typing import Optional

from . import sim
from .config import Config, ConfigError, parse_overrides, validate_config
from .evaluate import EvalReport, evaluate
from .inference import infer
from .model import MotionNet
from .train import TrainResult, train


def build_clips(cfg: Config, n: int, seed: int, paired: Optional[bool] = None) -> list:
    """n clips (or clip pairs) from consecutively seeded scenarios."""
    paired = cfg.data.paired if paired is None else paired
    out = []
    for i in range(n):
        sc = sim.generate_scenario(cfg.scenario, seed + i)
        if paired:
            out.append(
                sim.make_clip_pair(
                    sc, 0.0, cfg.data.pair_offset, cfg.model.frames,
                    cfg.data.spacing, cfg.model.n_steps, cfg.model.step_seconds,
                )
            )
        else:
            out.append(
                sim.make_clip(
                    sc, 0.0, cfg.model.frames, cfg.data.spacing,
                    cfg.model.n_steps, cfg.model.step_seconds,
                )
            )
    return out


def split_train_val(clips: list, val_fraction: float) -> tuple[list, list]:
    n_val = int(round(len(clips) * val_fraction))
    n_val = min(n_val, len(clips) - 1)
    if n_val <= 0:
        return clips, []
    return clips[:-n_val], clips[-n_val:]


def run_config(cfg: Config, out_dir: str) -> TrainResult:
    """Generate clips per the config, train, leave checkpoint + log in out_dir."""
    validate_config(cfg)
    clips = build_clips(cfg, cfg.data.n_clips, cfg.data.seed)
    train_clips, val_clips = split_train_val(clips, cfg.train.val_fraction)
    return train(
        cfg.model,
        cfg.grid,
        train_clips,
        val_clips,
        out_dir,
        weights=cfg.loss,
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        lr=cfg.train.lr,
        mgda=cfg.train.mgda,
        compensate=cfg.train.compensate,
        seed=cfg.train.seed,
        auto_weights=cfg.train.auto_weights,
    )


def eval_checkpoint(ckpt_path: str, cfg: Config, clips: Optional[list] = None) -> EvalReport:
    """Score a trained checkpoint on held-out scenarios (seeded away from the
    training seeds unless explicit clips are given)."""
    model, grid = MotionNet.load(ckpt_path)
    if grid is None:
        grid = cfg.grid
    if clips is None:
        clips = build_clips(cfg, cfg.data.n_eval, cfg.data.seed + 10_000, paired=False)
    outs, labs = [], []
    for c in clips:
        clip = c.a if isinstance(c, sim.ClipPair) else c
        outs.append(
            infer(
                model, clip, grid,
                theta_static=cfg.infer.theta_static,
                suppress=cfg.infer.suppress,
                mode=cfg.train.compensate,
            )
        )
        labs.append(sim.labels_from_clip(clip, grid))
    return evaluate(outs, labs, all_steps=cfg.infer.all_steps)


@dataclass
class MatrixSpec:
    base: dict  # dotted key -> raw value text, applied to every cell
    sweeps: list  # (dotted key, [raw value text, ...]) in declaration order


def parse_matrix(text: str) -> MatrixSpec:
    base: dict = {}
    sweeps: list = []
    swept_keys = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"matrix line {lineno}: expected key = value, got {body!r}")
        key, raw = (p.strip() for p in body.split("=", 1))
        if key.startswith("base."):
            target = key[len("base.") :]
            if target in base:
                raise ConfigError(f"matrix line {lineno}: duplicate base key {target!r}")
            base[target] = raw
        elif key.startswith("sweep."):
            target = key[len("sweep.") :]
            if target in swept_keys:
                raise ConfigError(f"matrix line {lineno}: duplicate sweep key {target!r}")
            # '|' separates alternatives; ',' only when no value needs commas
            parts = raw.split("|") if "|" in raw else raw.split(",")
            values = [p.strip() for p in parts if p.strip()]
            if len(values) < 1:
                raise ConfigError(f"matrix line {lineno}: sweep {target!r} has no values")
            swept_keys.add(target)
            sweeps.append((target, values))
        else:
            raise ConfigError(
                f"matrix line {lineno}: keys must start with 'base.' or 'sweep.', got {key!r}"
            )
    return MatrixSpec(base, sweeps)


def matrix_cells(spec: MatrixSpec) -> list:
    """All sweep combinations as (label, overrides) in row-major order."""
    cells = [("base", dict(spec.base))]
    for key, values in spec.sweeps:
        cells = [
            (
                f"{label};{key}={v}" if label != "base" else f"{key}={v}",
                {**overrides, key: v},
            )
            for label, overrides in cells
            for v in values
        ]
    return cells


def ablation_run(base_cfg: Config, matrix_text: str, workdir: Optional[str] = None) -> tuple[str, list]:
    """Train and evaluate every cell of the matrix; returns (csv, reports)."""
    spec = parse_matrix(matrix_text)
    cells = matrix_cells(spec)
    n_cat = base_cfg.model.categories
    lines = [EvalReport.csv_header(n_cat)]
    reports = []
    own_tmp = workdir is None
    workdir = workdir or tempfile.mkdtemp(prefix="ablation_")
    try:
        for i, (label, overrides) in enumerate(cells):
            cfg = parse_overrides(overrides, base_cfg)
            cell_dir = os.path.join(workdir, f"cell_{i:03d}")
            result = run_config(cfg, cell_dir)
            report = eval_checkpoint(result.ckpt_path, cfg)
            reports.append((label, report))
            lines.append(report.csv_row(label))
    finally:
        if own_tmp:
            import shutil

            shutil.rmtree(workdir, ignore_errors=True)
    return "\n".join(lines) + "\n", reports
