"""Training objectives: per-cell classification, motion, and state terms,
spatial and temporal consistency regularizers, and min-norm multi-task
gradient weighting.

Each loss is one graph node with a hand-derived backward pass: the forward
math runs as plain vectorized numpy and the node's vjp returns the analytic
gradient, so the full objective stays differentiable without needing
elementwise log/exp primitives in the tensor engine.

Conventions shared by all losses: grids are indexed (row, col) = (x, y);
motion fields are (B, N, 2, H, W) with the component axis holding (x, y);
the classification, motion, and state terms are weight-normalized means over
the non-empty cells of the whole batch, while the three consistency terms
are raw sums over pairs, objects, and overlap cells (so a batch of one
reproduces the per-sample definitions exactly).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .bev import GridSpec
from .nn import Tensor, custom_op

DEFAULT_ALPHA = 15.0
DEFAULT_BETA = 2.5
DEFAULT_GAMMA = 0.1


def _smooth_l1(e: np.ndarray) -> np.ndarray:
    a = np.abs(e)
    return np.where(a < 1.0, 0.5 * e * e, a - 0.5)


def _smooth_l1_grad(e: np.ndarray) -> np.ndarray:
    return np.where(np.abs(e) < 1.0, e, np.sign(e))


@dataclass
class LossWeights:
    """Balancing factors and per-category cell weights for the objective."""

    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    class_weights: np.ndarray = field(default_factory=lambda: np.ones(5))
    motion_weights: np.ndarray = field(default_factory=lambda: np.ones(5))
    state_weights: np.ndarray = field(default_factory=lambda: np.ones(2))

    def __post_init__(self):
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        self.motion_weights = np.asarray(self.motion_weights, dtype=np.float64)
        self.state_weights = np.asarray(self.state_weights, dtype=np.float64)
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("consistency weights must be non-negative")
        if np.any(self.class_weights <= 0) or np.any(self.motion_weights <= 0) or np.any(self.state_weights <= 0):
            raise ValueError("category weights must be positive")


@dataclass
class LossReport:
    l_cls: float
    l_motion: float
    l_state: float
    l_s: float
    l_ft: float
    l_bt: float
    total: float

    CSV_HEADER = "epoch,L_cls,L_motion,L_state,L_s,L_ft,L_bt,total,w1,w2,w3"

    def csv_row(self, epoch: int, task_weights=(1.0, 1.0, 1.0)) -> str:
        # .17g round-trips float64, so equal rows mean bit-equal values
        vals = [self.l_cls, self.l_motion, self.l_state, self.l_s, self.l_ft, self.l_bt, self.total]
        return ",".join([str(epoch)] + [f"{v:.17g}" for v in list(vals) + list(task_weights)])


def inverse_frequency_weights(counts, clip_lo: float = 0.05, clip_hi: float = 50.0) -> np.ndarray:
    """Inverse-frequency cell weights, mean-normalized then clipped. A class
    that never occurs gets the same treatment as a singleton; its weight is
    never selected anyway."""
    counts = np.asarray(counts, dtype=np.float64)
    w = 1.0 / np.maximum(counts, 1.0)
    w = w / w.mean()
    return np.clip(w, clip_lo, clip_hi)


def relative_targets(abs_motion: np.ndarray) -> np.ndarray:
    """Difference absolute per-step displacements (N, H, W, 2) into the
    relative offsets the motion head regresses, in head layout (N, 2, H, W)."""
    rel = np.diff(abs_motion, axis=0, prepend=np.zeros_like(abs_motion[:1]))
    return np.ascontiguousarray(rel.transpose(0, 3, 1, 2))


# -- per-cell heads ----------------------------------------------------------


def loss_cls(class_logits: Tensor, gt_category: np.ndarray, nonempty: np.ndarray, weights) -> Tensor:
    """Weighted cross-entropy over non-empty cells. logits (B, C, H, W)."""
    z = class_logits.data
    b, c, h, w = z.shape
    gt = np.asarray(gt_category)
    mask = np.asarray(nonempty, dtype=bool)
    if gt.shape != (b, h, w) or mask.shape != (b, h, w):
        raise ValueError(f"labels must be ({b},{h},{w}), got {gt.shape} and {mask.shape}")
    weights = np.asarray(weights, dtype=np.float64)
    if not mask.any():
        warnings.warn("classification loss over zero non-empty cells", RuntimeWarning)
        return custom_op(np.array(0.0), (class_logits,), lambda g: (np.zeros_like(z),))

    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    lse = np.log(ez.sum(axis=1)) + zmax[:, 0]
    p = ez / ez.sum(axis=1, keepdims=True)

    w_cell = np.where(mask, weights[gt], 0.0)
    picked = np.take_along_axis(z, gt[:, None], axis=1)[:, 0]
    wsum = w_cell.sum()
    value = float((w_cell * (lse - picked)).sum() / wsum)

    def vjp(g):
        dz = p * w_cell[:, None]
        at_gt = np.take_along_axis(dz, gt[:, None], axis=1)
        np.put_along_axis(dz, gt[:, None], at_gt - w_cell[:, None], axis=1)
        return (g * dz / wsum,)

    return custom_op(np.array(value), (class_logits,), vjp)


def loss_state(static_logit: Tensor, gt_state: np.ndarray, nonempty: np.ndarray, weights) -> Tensor:
    """Weighted binary cross-entropy on the static-probability logit over
    non-empty cells; the target is 1 where the cell is static. ``weights``
    indexes by state code (static, moving)."""
    z = static_logit.data
    gt = np.asarray(gt_state)
    mask = np.asarray(nonempty, dtype=bool)
    if z.shape != gt.shape or z.shape != mask.shape:
        raise ValueError(f"state label shapes {gt.shape}/{mask.shape} do not match logit {z.shape}")
    weights = np.asarray(weights, dtype=np.float64)
    if not mask.any():
        warnings.warn("state loss over zero non-empty cells", RuntimeWarning)
        return custom_op(np.array(0.0), (static_logit,), lambda g: (np.zeros_like(z),))

    t = np.where(gt == 0, 1.0, 0.0)
    w_cell = np.where(mask, weights[gt], 0.0)
    # stable BCE-from-logits: max(z,0) - z*t + log(1 + exp(-|z|))
    bce = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    wsum = w_cell.sum()
    value = float((w_cell * bce).sum() / wsum)
    sig = 1.0 / (1.0 + np.exp(-z))

    def vjp(g):
        return (g * w_cell * (sig - t) / wsum,)

    return custom_op(np.array(value), (static_logit,), vjp)


def loss_motion(rel_motion: Tensor, gt_rel: np.ndarray, category: np.ndarray, nonempty: np.ndarray, weights) -> Tensor:
    """Weighted smooth-L1 on relative offsets, (B, N, 2, H, W); each
    non-empty cell contributes its per-step, per-component mean scaled by its
    category weight."""
    pred = rel_motion.data
    gt = np.asarray(gt_rel, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"target shape {gt.shape} does not match prediction {pred.shape}")
    b, n, _, h, w = pred.shape
    cat = np.asarray(category)
    mask = np.asarray(nonempty, dtype=bool)
    if cat.shape != (b, h, w) or mask.shape != (b, h, w):
        raise ValueError(f"labels must be ({b},{h},{w}), got {cat.shape} and {mask.shape}")
    weights = np.asarray(weights, dtype=np.float64)
    if not mask.any():
        return custom_op(np.array(0.0), (rel_motion,), lambda g: (np.zeros_like(pred),))

    e = pred - gt
    w_cell = np.where(mask, weights[cat], 0.0)
    wsum = w_cell.sum()
    per_cell = _smooth_l1(e).sum(axis=(1, 2)) / (n * 2)
    value = float((w_cell * per_cell).sum() / wsum)
    scale = w_cell[:, None, None] / (wsum * n * 2)

    def vjp(g):
        return (g * _smooth_l1_grad(e) * scale,)

    return custom_op(np.array(value), (rel_motion,), vjp)


# -- consistency -------------------------------------------------------------


def loss_spatial(motion: Tensor, instance: np.ndarray) -> Tensor:
    """Smooth-L1 between the motions of index-adjacent cells of the same
    object (right and down neighbors, counted once), summed over every pair,
    step, and component. Zero when each object's field is constant."""
    m = motion.data
    b, n, _, h, w = m.shape
    inst = np.asarray(instance)
    if inst.shape != (b, h, w):
        raise ValueError(f"instance grid must be ({b},{h},{w}), got {inst.shape}")

    right = (inst[:, :, :-1] == inst[:, :, 1:]) & (inst[:, :, :-1] > 0)
    down = (inst[:, :-1, :] == inst[:, 1:, :]) & (inst[:, :-1, :] > 0)
    dr = m[:, :, :, :, :-1] - m[:, :, :, :, 1:]
    dd = m[:, :, :, :-1, :] - m[:, :, :, 1:, :]
    mr = right[:, None, None]
    md = down[:, None, None]
    value = float((_smooth_l1(dr) * mr).sum() + (_smooth_l1(dd) * md).sum())

    def vjp(g):
        gr = _smooth_l1_grad(dr) * mr
        gd = _smooth_l1_grad(dd) * md
        out = np.zeros_like(m)
        out[:, :, :, :, :-1] += gr
        out[:, :, :, :, 1:] -= gr
        out[:, :, :, :-1, :] += gd
        out[:, :, :, 1:, :] -= gd
        return (g * out,)

    return custom_op(np.array(value), (motion,), vjp)


def loss_fg_temporal(motion_a: Tensor, motion_b: Tensor, inst_a: np.ndarray, inst_b: np.ndarray, diagnostics: dict | None = None) -> Tensor:
    """Smooth-L1 between the two clips' per-object mean motions at matching
    step indices, summed over the objects both clips see. Objects visible in
    only one clip are skipped (tallied under ``skipped_instances`` when a
    diagnostics dict is supplied)."""
    ma, mb = motion_a.data, motion_b.data
    if ma.shape != mb.shape:
        raise ValueError(f"paired predictions disagree: {ma.shape} vs {mb.shape}")
    b = ma.shape[0]
    ia = np.asarray(inst_a)
    ib = np.asarray(inst_b)
    if ia.shape != (b,) + ma.shape[3:] or ib.shape != ia.shape:
        raise ValueError("instance grids must be (B, H, W) matching the motion fields")

    value = 0.0
    grads_a = np.zeros_like(ma)
    grads_b = np.zeros_like(mb)
    skipped = 0
    for k in range(b):
        ids_a = set(np.unique(ia[k])) - {0}
        ids_b = set(np.unique(ib[k])) - {0}
        skipped += len(ids_a ^ ids_b)
        for oid in sorted(ids_a & ids_b):
            sel_a = ia[k] == oid
            sel_b = ib[k] == oid
            avg_a = ma[k][:, :, sel_a].mean(axis=2)
            avg_b = mb[k][:, :, sel_b].mean(axis=2)
            diff = avg_a - avg_b
            value += _smooth_l1(diff).sum()
            g = _smooth_l1_grad(diff)
            grads_a[k][:, :, sel_a] += (g / sel_a.sum())[:, :, None]
            grads_b[k][:, :, sel_b] -= (g / sel_b.sum())[:, :, None]
    if diagnostics is not None:
        diagnostics["skipped_instances"] = diagnostics.get("skipped_instances", 0) + skipped

    def vjp(g):
        return (g * grads_a, g * grads_b)

    return custom_op(np.array(value), (motion_a, motion_b), vjp)


def loss_bg_temporal(
    motion_a: Tensor,
    motion_b: Tensor,
    t_ab: np.ndarray,
    grid: GridSpec,
    nonempty_a: np.ndarray,
    nonempty_b: np.ndarray,
) -> Tensor:
    """Agreement between the two clips' motion grids over the static scene.

    Each non-empty cell center of clip A is carried into clip B's frame by
    the ground-truth relative ego transform; clip B's field is sampled there
    bilinearly, its vectors rotated back into A's frame, and smooth-L1 taken
    against A's prediction. Summed over every overlap cell, step, and
    component. Cells whose warped position leaves the grid, or lands on empty
    space in B (nearest-cell test), drop out. ``t_ab`` may be a single 4x4 or
    one transform per batch element.
    """
    ma, mb = motion_a.data, motion_b.data
    if ma.shape != mb.shape:
        raise ValueError(f"paired predictions disagree: {ma.shape} vs {mb.shape}")
    b, n, _, h, w = ma.shape
    t_ab = np.asarray(t_ab, dtype=np.float64)
    if t_ab.shape == (4, 4):
        t_ab = np.broadcast_to(t_ab, (b, 4, 4))
    if t_ab.shape != (b, 4, 4):
        raise ValueError(f"relative transform must be 4x4 or (B,4,4), got {t_ab.shape}")
    mask_a = np.asarray(nonempty_a, dtype=bool)
    mask_b = np.asarray(nonempty_b, dtype=bool)
    if mask_a.shape != (b, h, w) or mask_b.shape != (b, h, w):
        raise ValueError("non-empty masks must be (B, H, W)")
    if (h, w) != grid.shape_hw:
        raise ValueError(f"grid {grid.shape_hw} does not match fields {(h, w)}")

    centers = grid.cell_centers()  # (H, W, 2)
    value = 0.0
    grads_a = np.zeros_like(ma)
    grads_b = np.zeros_like(mb)
    any_overlap = False
    for k in range(b):
        r = t_ab[k, :2, :2]
        t = t_ab[k, :2, 3]
        warped = centers @ r.T + t
        ux = (warped[:, :, 0] - grid.x_min) / grid.dx - 0.5
        uy = (warped[:, :, 1] - grid.y_min) / grid.dy - 0.5
        i0 = np.floor(ux).astype(np.int64)
        j0 = np.floor(uy).astype(np.int64)
        inside = (i0 >= 0) & (j0 >= 0) & (i0 + 1 < h) & (j0 + 1 < w)
        fx = ux - i0
        fy = uy - j0
        ni = np.rint(ux).astype(np.int64)
        nj = np.rint(uy).astype(np.int64)

        sel = mask_a[k] & inside
        nb_ok = np.zeros_like(sel)
        nb_ok[sel] = mask_b[k][ni[sel], nj[sel]]
        sel &= nb_ok
        if not sel.any():
            continue
        any_overlap = True
        ii, jj = i0[sel], j0[sel]
        wx, wy = fx[sel], fy[sel]
        w00 = (1 - wx) * (1 - wy)
        w10 = wx * (1 - wy)
        w01 = (1 - wx) * wy
        w11 = wx * wy
        flat_b = mb[k].reshape(n, 2, h * w)
        c00 = ii * w + jj
        c10 = (ii + 1) * w + jj
        c01 = ii * w + jj + 1
        c11 = (ii + 1) * w + jj + 1
        vb = (
            flat_b[:, :, c00] * w00
            + flat_b[:, :, c10] * w10
            + flat_b[:, :, c01] * w01
            + flat_b[:, :, c11] * w11
        )  # (N, 2, M)
        va = np.einsum("ba,nbm->nam", r, vb)
        e = ma[k][:, :, sel] - va
        value += _smooth_l1(e).sum()

        ge = _smooth_l1_grad(e)  # (N, 2, M)
        grads_a[k][:, :, sel] += ge
        gvb = -np.einsum("ba,nam->nbm", r, ge)
        gflat = np.zeros((n, 2, h * w))
        np.add.at(gflat, (slice(None), slice(None), c00), gvb * w00)
        np.add.at(gflat, (slice(None), slice(None), c10), gvb * w10)
        np.add.at(gflat, (slice(None), slice(None), c01), gvb * w01)
        np.add.at(gflat, (slice(None), slice(None), c11), gvb * w11)
        grads_b[k] += gflat.reshape(n, 2, h, w)

    if not any_overlap:
        warnings.warn("background temporal loss over an empty overlap", RuntimeWarning)

    def vjp(g):
        return (g * grads_a, g * grads_b)

    return custom_op(np.array(value), (motion_a, motion_b), vjp)


# -- composition -------------------------------------------------------------


def total_loss(l_cls, l_motion, l_state, l_s=None, l_ft=None, l_bt=None, weights: LossWeights | None = None):
    """Weighted sum of the six terms; returns (scalar Tensor, LossReport).
    Missing consistency terms count as zero."""
    if weights is None:
        weights = LossWeights()

    def val(x):
        return float(x.data) if isinstance(x, Tensor) else float(x or 0.0)

    total = l_cls + l_motion + l_state
    if l_s is not None:
        total = total + weights.alpha * l_s
    if l_ft is not None:
        total = total + weights.beta * l_ft
    if l_bt is not None:
        total = total + weights.gamma * l_bt
    report = LossReport(
        l_cls=val(l_cls),
        l_motion=val(l_motion),
        l_state=val(l_state),
        l_s=val(l_s) if l_s is not None else 0.0,
        l_ft=val(l_ft) if l_ft is not None else 0.0,
        l_bt=val(l_bt) if l_bt is not None else 0.0,
        total=val(total),
    )
    return total, report


# -- multi-task weighting ----------------------------------------------------


def mgda_weights(grads, max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Simplex weights at the min-norm point of the gradients' convex hull.

    Frank-Wolfe on the Gram matrix, starting from the shortest gradient's
    vertex with exact line search per iteration. All-zero gradients (a fresh
    network whose zero-initialized heads pass nothing back yet) yield uniform
    weights, and whenever the search cannot beat uniform weighting it falls
    back to uniform, so the weighted combination is never worse.
    """
    vecs = [np.asarray(g, dtype=np.float64).ravel() for g in grads]
    m = len(vecs)
    if m == 0:
        raise ValueError("at least one task gradient required")
    gram = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            gram[i, j] = gram[j, i] = float(vecs[i] @ vecs[j])

    uniform = np.full(m, 1.0 / m)
    if np.all(np.abs(gram) < 1e-24):
        return uniform

    w = np.zeros(m)
    w[int(np.argmin(np.diag(gram)))] = 1.0
    for _ in range(max_iter):
        mw = gram @ w
        v = int(np.argmin(mw))
        gap = float(w @ mw - mw[v])
        if gap < tol:
            break
        d = -w.copy()
        d[v] += 1.0
        dmd = float(d @ gram @ d)
        if dmd <= 0.0:
            break
        step = float(np.clip(-(w @ gram @ d) / dmd, 0.0, 1.0))
        if step == 0.0:
            break
        w = w + step * d

    # prefer uniform whenever it is at least as good (degenerate hulls included)
    if float(w @ gram @ w) > float(uniform @ gram @ uniform) - 1e-12:
        return uniform
    w = np.maximum(w, 0.0)
    return w / w.sum()
