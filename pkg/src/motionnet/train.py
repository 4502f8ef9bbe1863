"""Mini-batch training with optional multi-task gradient weighting.

Clips are turned into cached (input stack, label grids, offset targets)
samples up front. Each epoch shuffles, steps Adam on the combined objective,
then scores the validation clips; the checkpoint with the lowest sum of
group mean errors is kept. The training log CSV gets one row per epoch and
a final frozen row recomputed from the saved checkpoint in eval mode, which
an independent re-evaluation must reproduce exactly.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import losses as L
from .bev import GridSpec, build_input
from .evaluate import EvalReport, evaluate
from .inference import infer
from .model import MotionNet, StpnConfig
from .nn import Tensor, backward
from .nn.optim import Adam
from .sim import Clip, ClipPair, LabelGrids, labels_from_clip


@dataclass
class Sample:
    x: np.ndarray  # (T, Cz, H, W) uint8
    labels: LabelGrids
    rel_target: np.ndarray  # (N, 2, H, W)


@dataclass
class PairedSample:
    a: Sample
    b: Sample
    t_ab: np.ndarray  # (4, 4)


@dataclass
class TrainResult:
    ckpt_path: str
    log_path: str
    best_metric: float
    best_epoch: int
    reports: list
    final_report: L.LossReport
    skipped_steps: int


def prepare_sample(clip: Clip, grid: GridSpec, mode: str = "gt") -> Sample:
    labels = labels_from_clip(clip, grid)
    return Sample(build_input(clip, grid, mode=mode).maps, labels, L.relative_targets(labels.motion))


def prepare_dataset(clips: Sequence, grid: GridSpec, mode: str = "gt") -> list:
    out = []
    for c in clips:
        if isinstance(c, ClipPair):
            out.append(PairedSample(prepare_sample(c.a, grid, mode), prepare_sample(c.b, grid, mode), c.t_ab))
        else:
            out.append(prepare_sample(c, grid, mode))
    return out


def dataset_weights(samples: Sequence, categories: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-frequency class and state weights over non-empty cells."""
    cat_counts = np.zeros(categories, dtype=np.int64)
    state_counts = np.zeros(2, dtype=np.int64)
    for s in samples:
        s = s.a if isinstance(s, PairedSample) else s
        ne = s.labels.nonempty
        cat_counts += np.bincount(s.labels.category[ne].ravel(), minlength=categories)[:categories]
        state_counts += np.bincount(s.labels.state[ne].ravel(), minlength=2)[:2]
    return L.inverse_frequency_weights(cat_counts), L.inverse_frequency_weights(state_counts)


def _stack(samples: Sequence[Sample]):
    x = np.stack([s.x for s in samples]).astype(np.float64)
    cat = np.stack([s.labels.category for s in samples])
    inst = np.stack([s.labels.instance for s in samples])
    state = np.stack([s.labels.state for s in samples])
    ne = np.stack([s.labels.nonempty for s in samples])
    rel = np.stack([s.rel_target for s in samples])
    return x, cat, inst, state, ne, rel


def _batch_losses(model, batch, grid, weights, diagnostics=None):
    """Forward pass(es) and all loss nodes for one batch. Returns the three
    task scalars (cls, motion-with-consistency, state) plus the report rows."""
    paired = isinstance(batch[0], PairedSample)
    part_a = [s.a for s in batch] if paired else batch
    xa, cat_a, inst_a, state_a, ne_a, rel_a = _stack(part_a)

    pred_a = model.forward(xa, training=True)
    l_cls = L.loss_cls(pred_a.class_logits, cat_a, ne_a, weights.class_weights)
    l_motion = L.loss_motion(pred_a.motion, rel_a, cat_a, ne_a, weights.motion_weights)
    if pred_a.static_logit is not None:
        l_state = L.loss_state(pred_a.static_logit, state_a, ne_a, weights.state_weights)
    else:
        l_state = Tensor(np.array(0.0))

    l_s = l_ft = l_bt = None
    need_abs = weights.alpha > 0 or (paired and (weights.beta > 0 or weights.gamma > 0))
    if need_abs:
        abs_a = pred_a.absolute_displacement()
    if weights.alpha > 0:
        l_s = L.loss_spatial(abs_a, inst_a)
    if paired and (weights.beta > 0 or weights.gamma > 0):
        part_b = [s.b for s in batch]
        xb, _, inst_b, _, ne_b, _ = _stack(part_b)
        pred_b = model.forward(xb, training=True)
        abs_b = pred_b.absolute_displacement()
        if weights.beta > 0:
            l_ft = L.loss_fg_temporal(abs_a, abs_b, inst_a, inst_b, diagnostics=diagnostics)
        if weights.gamma > 0:
            t_ab = np.stack([s.t_ab for s in batch])
            l_bt = L.loss_bg_temporal(abs_a, abs_b, t_ab, grid, ne_a, ne_b)
    return l_cls, l_motion, l_state, l_s, l_ft, l_bt


def _combine_motion_task(l_motion, l_s, l_ft, l_bt, weights):
    task = l_motion
    if l_s is not None:
        task = task + weights.alpha * l_s
    if l_ft is not None:
        task = task + weights.beta * l_ft
    if l_bt is not None:
        task = task + weights.gamma * l_bt
    return task


def _shared_grad_vector(model) -> np.ndarray:
    parts = []
    for p in model.shared_parameters():
        g = p.grad
        parts.append(np.zeros(p.data.size) if g is None else g.ravel().copy())
    return np.concatenate(parts)


def validation_metric(report: EvalReport) -> float:
    """Sum of the group mean errors; absent groups contribute nothing."""
    return float(sum(report.mean.get(g, 0.0) for g in ("static", "slow", "fast")))


def _validate(model, val_clips, grid, mode) -> Optional[EvalReport]:
    if not val_clips:
        return None
    outs, labs = [], []
    for c in val_clips:
        clip = c.a if isinstance(c, ClipPair) else c
        outs.append(infer(model, clip, grid, mode=mode))
        labs.append(labels_from_clip(clip, grid))
    return evaluate(outs, labs)


def train(
    model_cfg: StpnConfig,
    grid: GridSpec,
    train_clips: Sequence,
    val_clips: Sequence,
    out_dir: str,
    weights: Optional[L.LossWeights] = None,
    epochs: int = 10,
    batch_size: int = 2,
    lr: float = 1e-3,
    mgda: bool = False,
    compensate: str = "gt",
    seed: int = 0,
    auto_weights: bool = True,
    log_name: str = "training_log.csv",
    ckpt_name: str = "model.mnckpt",
) -> TrainResult:
    if not train_clips:
        raise ValueError("no training clips")
    if weights is None:
        weights = L.LossWeights()
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, log_name)
    ckpt_path = os.path.join(out_dir, ckpt_name)

    samples = prepare_dataset(train_clips, grid, compensate)
    paired = [isinstance(s, PairedSample) for s in samples]
    if any(paired) and not all(paired):
        raise ValueError("cannot mix paired and unpaired clips in one training set")
    if (weights.beta > 0 or weights.gamma > 0) and not all(paired):
        raise ValueError("temporal consistency terms need paired clips")

    if auto_weights:
        cw, sw = dataset_weights(samples, model_cfg.categories)
        weights = L.LossWeights(weights.alpha, weights.beta, weights.gamma, cw, cw.copy(), sw)

    model = MotionNet(model_cfg, seed=seed)
    opt = Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)

    best_metric = np.inf
    best_epoch = -1
    reports = []
    log = open(log_path, "w")
    log.write(L.LossReport.CSV_HEADER + "\n")
    try:
        model.save(ckpt_path, grid=grid)  # placeholder so epochs=0 still yields a checkpoint
        for epoch in range(1, epochs + 1):
            order = rng.permutation(len(samples))
            rows = []
            wsum = np.zeros(3)
            for bi in range(0, len(order), batch_size):
                batch = [samples[i] for i in order[bi : bi + batch_size]]
                parts = _batch_losses(model, batch, grid, weights)
                l_cls, l_motion, l_state, l_s, l_ft, l_bt = parts

                if mgda:
                    # a disabled state head would contribute a zero gradient,
                    # which min-norm would happily put all its weight on
                    tasks = [l_cls, _combine_motion_task(l_motion, l_s, l_ft, l_bt, weights)]
                    if model_cfg.state_head:
                        tasks.append(l_state)
                    grads = []
                    for t in tasks:
                        model.zero_grad()
                        backward(t)
                        grads.append(_shared_grad_vector(model))
                    tw = L.mgda_weights(grads)
                    total = tasks[0] * tw[0]
                    for t, w in zip(tasks[1:], tw[1:]):
                        total = total + t * float(w)
                    if not model_cfg.state_head:
                        tw = np.append(tw, 0.0)
                    _, report = L.total_loss(l_cls, l_motion, l_state, l_s, l_ft, l_bt, weights)
                    report.total = float(total.data)
                else:
                    tw = np.ones(3)
                    total, report = L.total_loss(l_cls, l_motion, l_state, l_s, l_ft, l_bt, weights)

                if not np.isfinite(float(total.data)):
                    raise RuntimeError(f"non-finite loss at epoch {epoch} batch {bi // batch_size}")
                model.zero_grad()
                backward(total)
                opt.step()
                rows.append(report)
                wsum += tw

            n = len(rows)
            mean_report = L.LossReport(
                *(float(np.mean([getattr(r, f) for r in rows])) for f in ("l_cls", "l_motion", "l_state", "l_s", "l_ft", "l_bt", "total"))
            )
            reports.append(mean_report)
            log.write(mean_report.csv_row(epoch, tuple(wsum / n)) + "\n")
            log.flush()

            val = _validate(model, val_clips, grid, compensate)
            metric = validation_metric(val) if val is not None else -epoch
            if metric < best_metric:
                best_metric = metric
                best_epoch = epoch
                model.save(ckpt_path, grid=grid)

        # frozen row: deterministic re-evaluation of the winning checkpoint
        final_model, _ = MotionNet.load(ckpt_path)
        final_report = evaluate_losses(final_model, samples, grid, weights, batch_size)
        log.write(final_report.csv_row("final") + "\n")
    finally:
        log.close()

    return TrainResult(
        ckpt_path=ckpt_path,
        log_path=log_path,
        best_metric=float(best_metric),
        best_epoch=best_epoch,
        reports=reports,
        final_report=final_report,
        skipped_steps=opt.skipped_steps,
    )


def evaluate_losses(model, samples, grid, weights, batch_size: int = 2) -> L.LossReport:
    """Mean per-batch loss components over a dataset in eval mode, in dataset
    order with no parameter updates. Running twice from the same checkpoint
    gives bit-identical numbers."""
    rows = []
    for bi in range(0, len(samples), batch_size):
        batch = samples[bi : bi + batch_size]
        parts = _eval_batch_losses(model, batch, grid, weights)
        _, report = L.total_loss(*parts, weights)
        rows.append(report)
    return L.LossReport(
        *(float(np.mean([getattr(r, f) for r in rows])) for f in ("l_cls", "l_motion", "l_state", "l_s", "l_ft", "l_bt", "total"))
    )


def _eval_batch_losses(model, batch, grid, weights):
    paired = isinstance(batch[0], PairedSample)
    part_a = [s.a for s in batch] if paired else batch
    xa, cat_a, inst_a, state_a, ne_a, rel_a = _stack(part_a)
    pred_a = model.forward(xa, training=False)
    l_cls = L.loss_cls(pred_a.class_logits, cat_a, ne_a, weights.class_weights)
    l_motion = L.loss_motion(pred_a.motion, rel_a, cat_a, ne_a, weights.motion_weights)
    if pred_a.static_logit is not None:
        l_state = L.loss_state(pred_a.static_logit, state_a, ne_a, weights.state_weights)
    else:
        l_state = Tensor(np.array(0.0))
    l_s = l_ft = l_bt = None
    if weights.alpha > 0 or (paired and (weights.beta > 0 or weights.gamma > 0)):
        abs_a = pred_a.absolute_displacement()
    if weights.alpha > 0:
        l_s = L.loss_spatial(abs_a, inst_a)
    if paired and (weights.beta > 0 or weights.gamma > 0):
        part_b = [s.b for s in batch]
        xb, _, inst_b, _, ne_b, _ = _stack(part_b)
        pred_b = model.forward(xb, training=False)
        abs_b = pred_b.absolute_displacement()
        if weights.beta > 0:
            l_ft = L.loss_fg_temporal(abs_a, abs_b, inst_a, inst_b)
        if weights.gamma > 0:
            l_bt = L.loss_bg_temporal(abs_a, abs_b, np.stack([s.t_ab for s in batch]), grid, ne_a, ne_b)
    return l_cls, l_motion, l_state, l_s, l_ft, l_bt
