"""Non-learned motion baselines.

The static baseline predicts zero displacement everywhere. The
constant-velocity baseline reads each cell's displacement over the last
input interval (ground-truth rigid flow by default) and extrapolates it
linearly across the prediction horizon. Both emit background categories and
make no state claims, so only their displacement fields are meaningful.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .bev import GridSpec
from .inference import InferenceOutput
from .sim import Clip, LabelGrids, labels_from_clip


def _rigid_point_motion(pts: np.ndarray, c0, yaw0, c1, yaw1) -> np.ndarray:
    """Displacement of material points riding a box between the two poses."""
    d = yaw1 - yaw0
    r = np.array([[np.cos(d), -np.sin(d)], [np.sin(d), np.cos(d)]])
    rel = pts - c0[:2]
    return rel @ r.T + c0[:2] + (c1[:2] - c0[:2]) - pts


def baseline_static(clip: Clip, grid: GridSpec, n_steps: Optional[int] = None) -> InferenceOutput:
    h, w = grid.shape_hw
    n = clip.n_future if n_steps is None else int(n_steps)
    return InferenceOutput(
        category=np.zeros((h, w), dtype=np.uint8),
        displacement=np.zeros((n, h, w, 2)),
        static_prob=np.ones((h, w)),
    )


def chord_flow(clip: Clip, grid: GridSpec, labels: Optional[LabelGrids] = None) -> np.ndarray:
    """Ground-truth per-cell displacement over the last input interval,
    (H, W, 2) in the keyframe ego frame; zero on background."""
    cur = clip.current_index
    if cur < 1:
        raise ValueError("flow needs at least two input frames")
    if labels is None:
        labels = labels_from_clip(clip, grid)

    h, w = grid.shape_hw
    r_ego = clip.ego_poses[cur][:2, :2]
    t_ego = clip.ego_poses[cur][:2, 3]
    centers_world = grid.cell_centers().reshape(-1, 2) @ r_ego.T + t_ego

    flow = np.zeros((h * w, 2))
    inst = labels.instance.reshape(-1)
    for i, actor_id in enumerate(clip.actor_ids):
        cells = inst == actor_id
        if actor_id == 0 or not cells.any():
            continue
        now = clip.actor_poses[cur, i]
        prev = clip.actor_poses[cur - 1, i]
        moved_back = _rigid_point_motion(centers_world[cells], now[:3], now[3], prev[:3], prev[3])
        flow[cells] = -moved_back @ r_ego  # world -> ego frame
    return flow.reshape(h, w, 2)


def baseline_const_velocity(
    clip: Clip,
    grid: GridSpec,
    flow: Optional[np.ndarray] = None,
    labels: Optional[LabelGrids] = None,
) -> InferenceOutput:
    """Linear extrapolation of per-interval flow: the displacement at future
    step k is flow scaled by (k+1) * step / frame_spacing."""
    if labels is None:
        labels = labels_from_clip(clip, grid)
    if flow is None:
        flow = chord_flow(clip, grid, labels)
    h, w = grid.shape_hw
    if flow.shape != (h, w, 2):
        raise ValueError(f"flow must be ({h},{w},2), got {flow.shape}")

    n = labels.n_steps
    scale = (np.arange(1, n + 1) * labels.step) / clip.frame_spacing
    disp = flow[None] * scale[:, None, None, None]
    return InferenceOutput(
        category=np.zeros((h, w), dtype=np.uint8),
        displacement=disp,
        static_prob=np.zeros((h, w)),
    )
