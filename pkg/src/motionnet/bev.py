"""Ego-motion compensation and binary BEV voxelization.

Rows of the grid index x, columns index y, and the z bins become the
channel axis of the pseudo-image. All operations are pure functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -32.0
    x_max: float = 32.0
    y_min: float = -32.0
    y_max: float = 32.0
    z_min: float = -3.0
    z_max: float = 2.0
    dx: float = 0.25
    dy: float = 0.25
    dz: float = 0.4

    def __post_init__(self):
        for lo, hi, d, name in (
            (self.x_min, self.x_max, self.dx, "x"),
            (self.y_min, self.y_max, self.dy, "y"),
            (self.z_min, self.z_max, self.dz, "z"),
        ):
            if not (hi > lo and d > 0):
                raise ValueError(f"degenerate {name} range [{lo}, {hi}] with step {d}")

    @staticmethod
    def _bins(lo: float, hi: float, d: float) -> int:
        # ceiling division with a guard against float noise landing an exact
        # quotient epsilon above the integer
        return max(1, math.ceil((hi - lo) / d - 1e-9))

    @property
    def h(self) -> int:
        return self._bins(self.x_min, self.x_max, self.dx)

    @property
    def w(self) -> int:
        return self._bins(self.y_min, self.y_max, self.dy)

    @property
    def n_z(self) -> int:
        return self._bins(self.z_min, self.z_max, self.dz)

    @property
    def shape_hw(self) -> tuple[int, int]:
        return (self.h, self.w)

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.z_min])

    @property
    def deltas(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz])

    def cell_centers(self) -> np.ndarray:
        """(H, W, 2) xy centers of the ground-plane cells."""
        xs = self.x_min + (np.arange(self.h) + 0.5) * self.dx
        ys = self.y_min + (np.arange(self.w) + 0.5) * self.dy
        out = np.empty((self.h, self.w, 2))
        out[:, :, 0] = xs[:, None]
        out[:, :, 1] = ys[None, :]
        return out


@dataclass
class BEVSequence:
    """T binary occupancy pseudo-images in current-frame coordinates,
    keyframe last."""

    maps: np.ndarray  # (T, C_z, H, W) uint8
    grid: GridSpec
    timestamps: np.ndarray  # (T,)


def voxelize(points: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Binary occupancy (C_z, H, W); half-open bins [lo, lo + d), points
    outside any range are dropped."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.zeros((grid.n_z, grid.h, grid.w), dtype=np.uint8)
    if len(points) == 0:
        return out
    idx = np.floor((points - grid.lo) / grid.deltas).astype(np.int64)
    ok = (
        (idx[:, 0] >= 0) & (idx[:, 0] < grid.h)
        & (idx[:, 1] >= 0) & (idx[:, 1] < grid.w)
        & (idx[:, 2] >= 0) & (idx[:, 2] < grid.n_z)
    )
    idx = idx[ok]
    out[idx[:, 2], idx[:, 0], idx[:, 1]] = 1
    return out


def _check_rigid(pose: np.ndarray, what: str) -> None:
    r = pose[:3, :3]
    if np.abs(r.T @ r - np.eye(3)).max() > 1e-6 or np.linalg.det(r) < 0:
        raise ValueError(f"{what}: rotation block is not orthonormal (non-rigid pose)")
    if np.abs(pose[3] - np.array([0, 0, 0, 1])).max() > 1e-6:
        raise ValueError(f"{what}: bottom row is not (0, 0, 0, 1)")


def relative_transform(clip, frame: int, target: int) -> np.ndarray:
    """Rigid transform taking frame ``frame`` coordinates into frame
    ``target`` coordinates, from the clip's stored ego poses."""
    src, dst = clip.ego_poses[frame], clip.ego_poses[target]
    _check_rigid(src, f"ego pose of frame {frame}")
    _check_rigid(dst, f"ego pose of frame {target}")
    return np.linalg.inv(dst) @ src


def compensate_ego(clip, mode: str, target_index: int | None = None) -> list[np.ndarray]:
    """Express every input frame's points in the keyframe's coordinates.

    mode "gt" applies the exact relative ego transform; mode "none" passes
    each frame's local coordinates through untouched, so a moving ego smears
    the static world across frames.
    """
    if mode not in ("gt", "none"):
        raise ValueError(f"unknown compensation mode {mode!r}")
    cur = clip.current_index if target_index is None else target_index
    frames = []
    for i in range(clip.current_index + 1):
        pts = np.asarray(clip.points[i], dtype=np.float64).reshape(-1, 3)
        if mode == "none" or i == cur:
            frames.append(pts.copy())
            continue
        t = relative_transform(clip, i, cur)
        frames.append(pts @ t[:3, :3].T + t[:3, 3])
    return frames


def build_input(clip, grid: GridSpec, mode: str = "gt") -> BEVSequence:
    """Compensate then voxelize each input frame; keyframe last."""
    frames = compensate_ego(clip, mode)
    maps = np.stack([voxelize(f, grid) for f in frames])
    return BEVSequence(maps, grid, np.asarray(clip.timestamps[: clip.current_index + 1]))
