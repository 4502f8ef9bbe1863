"""Synthetic driving scenes with exact ground truth.

Actors are rigid boxes riding closed-form planar trajectories, so box poses,
ego transforms, and per-cell motion are available analytically at any time
(including the negative times of history frames). LiDAR-like sweeps sample
box surfaces plus a ground plane with range attenuation and isotropic
Gaussian noise; a fixed seed pins every byte.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bev import GridSpec, voxelize
from .nn.checkpoint import fnv1a64

CATEGORY_NAMES = ("background", "vehicle", "pedestrian", "bicycle", "other")
NUM_CATEGORIES = len(CATEGORY_NAMES)
STATE_STATIC, STATE_MOVING = 0, 1

# horizon-average speed below which a cell is labeled static, m/s;
# shared by labeling and the evaluation speed split
STATIC_SPEED = 0.2

# ego sensor sits this far above the ground plane (z=0 in world coordinates)
SENSOR_HEIGHT = 1.7

EGO_BOX_SIZE = (4.5, 1.9, 1.6)

CLIP_MAGIC = b"MNCLIP01"


class SimulationError(RuntimeError):
    """Scenario generation could not satisfy its constraints."""


class ClipFormatError(ValueError):
    """Malformed or truncated clip file."""


# ---------------------------------------------------------------------------
# trajectories


def _rot2(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class PlanarTrajectory:
    """Closed-form planar pose over time; ``pose(0)`` is the anchor.

    kinds: stationary, straight, turn (constant turn rate about a fixed
    center), stop_and_go (straight motion gated by a go/stop duty cycle).
    """

    kind: str
    p0: tuple[float, float]
    yaw0: float
    speed: float = 0.0
    turn_rate: float = 0.0
    go_time: float = 2.0
    stop_time: float = 2.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("stationary", "straight", "turn", "stop_and_go"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "turn" and abs(self.turn_rate) < 1e-9:
            raise ValueError("turn trajectory needs a nonzero turn rate")

    def _travel(self, t: float) -> float:
        """Arc length traveled between time 0 and t (signed)."""
        if self.kind in ("stationary",):
            return 0.0
        if self.kind in ("straight", "turn"):
            return self.speed * t
        cycle = self.go_time + self.stop_time

        def go_measure(u: float) -> float:
            full, rem = divmod(u + self.phase, cycle)
            return full * self.go_time + min(rem, self.go_time)

        return self.speed * (go_measure(t) - go_measure(0.0))

    def pose(self, t: float) -> tuple[np.ndarray, float]:
        """(xy position, yaw) at time t."""
        p0 = np.asarray(self.p0, dtype=np.float64)
        if self.kind == "turn":
            # circular arc about the fixed center to the left (or right) of
            # the anchor heading
            radius = self.speed / self.turn_rate
            normal = np.array([-np.sin(self.yaw0), np.cos(self.yaw0)])
            center = p0 + radius * normal
            phi = self.turn_rate * t
            pos = center + _rot2(phi) @ (p0 - center)
            return pos, self.yaw0 + phi
        s = self._travel(t)
        heading = np.array([np.cos(self.yaw0), np.sin(self.yaw0)])
        return p0 + s * heading, self.yaw0

    def velocity(self, t: float) -> np.ndarray:
        """Instantaneous xy velocity at time t."""
        if self.kind == "stationary":
            return np.zeros(2)
        if self.kind == "turn":
            yaw = self.yaw0 + self.turn_rate * t
            return self.speed * np.array([np.cos(yaw), np.sin(yaw)])
        v = self.speed
        if self.kind == "stop_and_go":
            cycle = self.go_time + self.stop_time
            if (t + self.phase) % cycle >= self.go_time:
                v = 0.0
        return v * np.array([np.cos(self.yaw0), np.sin(self.yaw0)])


@dataclass(frozen=True)
class RigidActor:
    actor_id: int
    category: int  # index into CATEGORY_NAMES, never 0
    size: tuple[float, float, float]  # length, width, height
    trajectory: PlanarTrajectory

    def box_pose(self, t: float) -> tuple[np.ndarray, float]:
        """(xyz center, yaw); boxes rest on the ground plane."""
        xy, yaw = self.trajectory.pose(t)
        return np.array([xy[0], xy[1], self.size[2] / 2.0]), yaw


@dataclass(frozen=True)
class EgoTrajectory:
    """Sensor trajectory; ``pose_matrix`` maps ego coordinates to world."""

    trajectory: PlanarTrajectory

    def pose_matrix(self, t: float) -> np.ndarray:
        xy, yaw = self.trajectory.pose(t)
        m = np.eye(4)
        m[:2, :2] = _rot2(yaw)
        m[0, 3], m[1, 3], m[2, 3] = xy[0], xy[1], SENSOR_HEIGHT
        return m


# ---------------------------------------------------------------------------
# scenario generation


@dataclass(frozen=True)
class ScenarioConfig:
    x_min: float = -8.0
    x_max: float = 8.0
    y_min: float = -8.0
    y_max: float = 8.0
    n_vehicles: int = 2
    n_pedestrians: int = 1
    n_bicycles: int = 1
    n_others: int = 1
    n_clutter: int = 4
    vehicle_speed: tuple[float, float] = (3.0, 8.0)
    pedestrian_speed: tuple[float, float] = (0.5, 1.8)
    bicycle_speed: tuple[float, float] = (2.0, 5.0)
    other_speed: tuple[float, float] = (0.3, 1.0)
    stationary_fraction: float = 0.25
    turn_fraction: float = 0.4
    stop_go_fraction: float = 0.1
    turn_rate: tuple[float, float] = (0.25, 0.8)
    ego_speed: tuple[float, float] = (0.0, 2.0)
    ego_turn_fraction: float = 0.3
    ego_stationary_fraction: float = 0.25
    point_density: float = 8.0  # points per m^2 of surface at reference range
    ground_density: float = 3.0  # points per m^2 of ground
    range_ref: float = 10.0
    range_max: float = 40.0
    noise_sigma: float = 0.02
    placement_margin: float = 0.5
    placement_clearance: float = 0.3
    static_speed: float = STATIC_SPEED


@dataclass(frozen=True)
class Scenario:
    seed: int
    config: ScenarioConfig
    ego: EgoTrajectory
    actors: tuple[RigidActor, ...]
    clutter: tuple[RigidActor, ...]  # unlabeled static boxes, category 0


_SIZE_RANGES = {
    1: ((3.8, 4.8), (1.7, 2.0), (1.4, 1.8)),  # vehicle
    2: ((0.4, 0.6), (0.4, 0.6), (1.5, 1.9)),  # pedestrian
    3: ((1.5, 1.9), (0.5, 0.7), (1.0, 1.4)),  # bicycle
    4: ((0.8, 2.4), (0.6, 1.8), (0.8, 2.2)),  # other
}
_CLUTTER_SIZE = ((0.4, 2.0), (0.4, 2.0), (0.5, 2.5))


def _sample_size(rng: np.random.Generator, ranges) -> tuple[float, float, float]:
    return tuple(float(rng.uniform(lo, hi)) for lo, hi in ranges)


def _obb_corners(center, yaw, length, width) -> np.ndarray:
    r = _rot2(yaw)
    half = np.array([[length / 2, width / 2], [length / 2, -width / 2],
                     [-length / 2, -width / 2], [-length / 2, width / 2]])
    return center + half @ r.T


def _obbs_overlap(c1, yaw1, l1, w1, c2, yaw2, l2, w2, clearance=0.0) -> bool:
    """Separating-axis test between two 2D oriented boxes, each inflated by
    half the clearance."""
    a = _obb_corners(np.asarray(c1), yaw1, l1 + clearance, w1 + clearance)
    b = _obb_corners(np.asarray(c2), yaw2, l2 + clearance, w2 + clearance)
    for yaw in (yaw1, yaw2):
        r = _rot2(yaw)
        for axis in (r[:, 0], r[:, 1]):
            pa, pb = a @ axis, b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _sample_trajectory(rng: np.random.Generator, cfg: ScenarioConfig, category: int,
                       p0, yaw0: float) -> PlanarTrajectory:
    speed_range = {
        1: cfg.vehicle_speed,
        2: cfg.pedestrian_speed,
        3: cfg.bicycle_speed,
        4: cfg.other_speed,
    }[category]
    u = rng.random()
    if u < cfg.stationary_fraction:
        return PlanarTrajectory("stationary", tuple(p0), yaw0)
    speed = float(rng.uniform(*speed_range))
    if category in (1, 3):  # vehicles and bicycles may turn or stop-and-go
        v = rng.random()
        if v < cfg.turn_fraction:
            rate = float(rng.uniform(*cfg.turn_rate)) * (1.0 if rng.random() < 0.5 else -1.0)
            return PlanarTrajectory("turn", tuple(p0), yaw0, speed=speed, turn_rate=rate)
        if v < cfg.turn_fraction + cfg.stop_go_fraction:
            return PlanarTrajectory(
                "stop_and_go", tuple(p0), yaw0, speed=speed,
                go_time=float(rng.uniform(1.0, 3.0)), stop_time=float(rng.uniform(0.5, 2.0)),
                phase=float(rng.uniform(0.0, 4.0)),
            )
    return PlanarTrajectory("straight", tuple(p0), yaw0, speed=speed)


def generate_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Place actors and clutter in the region with disjoint boxes at t=0.

    The ego starts at the origin with zero yaw, so world coordinates equal
    the ego frame of a clip whose keyframe is at t=0. Deterministic in seed.
    """
    rng = np.random.default_rng(seed)

    ego_u = rng.random()
    if ego_u < config.ego_stationary_fraction:
        ego_traj = PlanarTrajectory("stationary", (0.0, 0.0), 0.0)
    elif ego_u < config.ego_stationary_fraction + config.ego_turn_fraction:
        rate = float(rng.uniform(*config.turn_rate)) * (1.0 if rng.random() < 0.5 else -1.0)
        speed = float(rng.uniform(max(0.5, config.ego_speed[0]), max(0.6, config.ego_speed[1])))
        ego_traj = PlanarTrajectory("turn", (0.0, 0.0), 0.0, speed=speed, turn_rate=rate)
    else:
        speed = float(rng.uniform(*config.ego_speed))
        ego_traj = PlanarTrajectory("straight", (0.0, 0.0), 0.0, speed=speed)

    placed: list[tuple[np.ndarray, float, float, float]] = [
        (np.zeros(2), 0.0, EGO_BOX_SIZE[0], EGO_BOX_SIZE[1])
    ]

    def place(length: float, width: float, what: str) -> tuple[np.ndarray, float]:
        # the box may sit at any yaw, so reserve its larger half-extent on
        # both axes
        ext = max(length, width) / 2
        lo_x = config.x_min + config.placement_margin + ext
        hi_x = config.x_max - config.placement_margin - ext
        lo_y = config.y_min + config.placement_margin + ext
        hi_y = config.y_max - config.placement_margin - ext
        if lo_x >= hi_x or lo_y >= hi_y:
            raise SimulationError(f"region too small to place {what}")
        for _ in range(200):
            c = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
            yaw = float(rng.uniform(-np.pi, np.pi))
            if not any(
                _obbs_overlap(c, yaw, length, width, pc, pyaw, pl, pw, config.placement_clearance)
                for pc, pyaw, pl, pw in placed
            ):
                placed.append((c, yaw, length, width))
                return c, yaw
        raise SimulationError(f"could not place {what} after 200 attempts")

    actors: list[RigidActor] = []
    next_id = 1
    for category, count in ((1, config.n_vehicles), (2, config.n_pedestrians),
                            (3, config.n_bicycles), (4, config.n_others)):
        for _ in range(count):
            size = _sample_size(rng, _SIZE_RANGES[category])
            c, yaw = place(size[0], size[1], CATEGORY_NAMES[category])
            traj = _sample_trajectory(rng, config, category, c, yaw)
            actors.append(RigidActor(next_id, category, size, traj))
            next_id += 1

    clutter: list[RigidActor] = []
    for _ in range(config.n_clutter):
        size = _sample_size(rng, _CLUTTER_SIZE)
        c, yaw = place(size[0], size[1], "clutter")
        clutter.append(RigidActor(0, 0, size, PlanarTrajectory("stationary", tuple(c), yaw)))

    return Scenario(seed, config, EgoTrajectory(ego_traj), tuple(actors), tuple(clutter))


# ---------------------------------------------------------------------------
# LiDAR sampling


def _box_surface_points(rng: np.random.Generator, n: int, size) -> np.ndarray:
    """n points uniform on the four side faces and the top, box-local coords
    (origin at box center)."""
    l, w, h = size
    areas = np.array([w * h, w * h, l * h, l * h, l * w])
    counts = rng.multinomial(n, areas / areas.sum())
    pts = np.empty((n, 3))
    k = 0
    for face, m in enumerate(counts):
        if m == 0:
            continue
        u = rng.uniform(-0.5, 0.5, (m, 2))
        if face < 2:  # x = +-l/2 planes
            block = np.column_stack([np.full(m, (l / 2) * (1 if face == 0 else -1)), u[:, 0] * w, u[:, 1] * h])
        elif face < 4:  # y = +-w/2 planes
            block = np.column_stack([u[:, 0] * l, np.full(m, (w / 2) * (1 if face == 2 else -1)), u[:, 1] * h])
        else:  # top
            block = np.column_stack([u[:, 0] * l, u[:, 1] * w, np.full(m, h / 2)])
        pts[k : k + m] = block
        k += m
    return pts


def _lidar_rng(scenario: Scenario, t: float) -> np.random.Generator:
    key = int(round(t * 1e6)) % (2**32)
    return np.random.default_rng(np.random.SeedSequence([scenario.seed % (2**63), key]))


def sample_lidar(scenario: Scenario, t: float) -> np.ndarray:
    """One sweep at time t, ego-frame coordinates, shape (P, 3).

    Deterministic in (scenario seed, t): resampling the same instant yields
    identical points regardless of which clip asks.
    """
    cfg = scenario.config
    rng = _lidar_rng(scenario, t)
    ego_pose = scenario.ego.pose_matrix(t)
    ego_xy = ego_pose[:2, 3]

    world_pts: list[np.ndarray] = []
    for actor in list(scenario.actors) + list(scenario.clutter):
        center, yaw = actor.box_pose(t)
        half_diag = 0.5 * np.hypot(actor.size[0], actor.size[1])
        dist = float(np.hypot(*(center[:2] - ego_xy)))
        if dist - half_diag > cfg.range_max:
            continue
        l, w, h = actor.size
        area = 2 * (l * h + w * h) + l * w
        atten = (cfg.range_ref / max(cfg.range_ref, dist)) ** 2
        n = int(rng.poisson(cfg.point_density * area * atten))
        if n == 0:
            continue
        local = _box_surface_points(rng, n, actor.size)
        r = _rot2(yaw)
        pts = np.column_stack([local[:, :2] @ r.T + center[:2], local[:, 2] + center[2]])
        world_pts.append(pts)

    area = (cfg.x_max - cfg.x_min) * (cfg.y_max - cfg.y_min)
    n_ground = int(rng.poisson(cfg.ground_density * area))
    if n_ground:
        gx = rng.uniform(cfg.x_min, cfg.x_max, n_ground)
        gy = rng.uniform(cfg.y_min, cfg.y_max, n_ground)
        world_pts.append(np.column_stack([gx, gy, np.zeros(n_ground)]))

    pts = np.concatenate(world_pts, axis=0) if world_pts else np.zeros((0, 3))
    if cfg.noise_sigma > 0 and len(pts):
        pts = pts + rng.normal(0.0, cfg.noise_sigma, pts.shape)

    # world -> ego frame at t
    r = ego_pose[:3, :3]
    return (pts - ego_pose[:3, 3]) @ r


# ---------------------------------------------------------------------------
# ground-truth label grids


@dataclass
class LabelGrids:
    category: np.ndarray  # (H, W) uint8, 0 = background
    instance: np.ndarray  # (H, W) int32, 0 = background
    motion: np.ndarray  # (N, H, W, 2) float64, displacement from t to t + k*step
    state: np.ndarray  # (H, W) uint8, STATE_STATIC / STATE_MOVING
    nonempty: np.ndarray  # (H, W) bool
    n_steps: int = 0
    step: float = 0.0

    def __post_init__(self):
        self.n_steps = int(self.motion.shape[0])


def _cell_motion(centers_xy: np.ndarray, c0, yaw0, c1, yaw1) -> np.ndarray:
    """Displacement of material points at centers_xy riding a box from pose
    (c0, yaw0) to (c1, yaw1): rotate about the box center, translate with it."""
    r = _rot2(yaw1 - yaw0)
    rel = centers_xy - c0[:2]
    return rel @ r.T + c0[:2] + (c1[:2] - c0[:2]) - centers_xy


def _points_in_obb(centers_xy: np.ndarray, center, yaw, length, width) -> np.ndarray:
    d = centers_xy - center[:2]
    c, s = np.cos(yaw), np.sin(yaw)
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    return (np.abs(lx) <= length / 2) & (np.abs(ly) <= width / 2)


def _grid_labels(
    grid: GridSpec,
    ego_pose: np.ndarray,
    actor_list,
    poses_now,
    poses_future,
    keyframe_points: np.ndarray,
    n_steps: int,
    step: float,
    static_speed: float,
) -> LabelGrids:
    """Shared label math. ``poses_now`` is a list of (center3, yaw) at the
    current time, ``poses_future`` a list of per-step pose lists."""
    h, w = grid.shape_hw
    centers_local = grid.cell_centers().reshape(-1, 2)
    r_ego = ego_pose[:2, :2]
    centers_world = centers_local @ r_ego.T + ego_pose[:2, 3]

    category = np.zeros((h, w), dtype=np.uint8)
    instance = np.zeros((h, w), dtype=np.int32)
    motion = np.zeros((n_steps, h, w, 2))
    best_d2 = np.full(h * w, np.inf)
    owner = np.full(h * w, -1, dtype=np.int64)

    for a_idx, actor in enumerate(actor_list):
        center, yaw = poses_now[a_idx]
        inside = _points_in_obb(centers_world, center, yaw, actor.size[0], actor.size[1])
        if not inside.any():
            continue
        d2 = ((centers_world - center[:2]) ** 2).sum(axis=1)
        take = inside & (d2 < best_d2)
        best_d2[take] = d2[take]
        owner[take] = a_idx

    flat_cat = category.reshape(-1)
    flat_inst = instance.reshape(-1)
    for a_idx, actor in enumerate(actor_list):
        cells = owner == a_idx
        if not cells.any():
            continue
        flat_cat[cells] = actor.category
        flat_inst[cells] = actor.actor_id
        c0, yaw0 = poses_now[a_idx]
        pts = centers_world[cells]
        for k in range(n_steps):
            c1, yaw1 = poses_future[a_idx][k]
            m_world = _cell_motion(pts, c0, yaw0, c1, yaw1)
            motion[k].reshape(-1, 2)[cells] = m_world @ r_ego  # rotate into ego frame

    nonempty = voxelize(keyframe_points, grid).any(axis=0)

    state = np.full((h, w), STATE_STATIC, dtype=np.uint8)
    if n_steps:
        speed = np.linalg.norm(motion[-1], axis=-1) / (n_steps * step)
        state[speed >= static_speed] = STATE_MOVING
    return LabelGrids(category, instance, motion, state, nonempty, n_steps, step)


def derive_cell_gt(scenario: Scenario, t: float, n_steps: int, step: float, grid: GridSpec) -> LabelGrids:
    """Exact labels at time t: category/instance by cell-center-in-box (ties
    to the nearest box center), motion as the rigid displacement of the cell
    center to each of the n future timestamps, expressed in the ego frame at
    t; state from horizon-average speed against the static threshold."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    poses_now = [a.box_pose(t) for a in scenario.actors]
    poses_future = [
        [a.box_pose(t + (k + 1) * step) for k in range(n_steps)] for a in scenario.actors
    ]
    return _grid_labels(
        grid,
        scenario.ego.pose_matrix(t),
        scenario.actors,
        poses_now,
        poses_future,
        sample_lidar(scenario, t),
        n_steps,
        step,
        scenario.config.static_speed,
    )


# ---------------------------------------------------------------------------
# clips


@dataclass
class Clip:
    """A multi-frame sample: input frames (ending at the keyframe) plus
    point-free future annotation frames that carry the box poses labels need.

    ``points[i]`` is in frame i's own ego coordinates.
    """

    timestamps: np.ndarray  # (F,)
    points: list  # F arrays (P_i, 3) float64
    ego_poses: np.ndarray  # (F, 4, 4) ego->world
    actor_ids: np.ndarray  # (A,)
    actor_categories: np.ndarray  # (A,)
    actor_sizes: np.ndarray  # (A, 3)
    actor_poses: np.ndarray  # (F, A, 4): cx, cy, cz, yaw
    frame_spacing: float
    current_index: int

    @property
    def n_frames(self) -> int:
        return self.current_index + 1

    @property
    def n_future(self) -> int:
        return len(self.timestamps) - self.n_frames

    @property
    def current_time(self) -> float:
        return float(self.timestamps[self.current_index])

    @property
    def future_step(self) -> float:
        if self.n_future == 0:
            raise ValueError("clip has no future annotation frames")
        return float(self.timestamps[self.current_index + 1] - self.timestamps[self.current_index])


@dataclass
class ClipPair:
    """Two clips of the same scenario offset by a small time delta, plus the
    ego transform taking frame-A coordinates into frame-B coordinates."""

    a: Clip
    b: Clip
    t_ab: np.ndarray  # (4, 4)


def make_clip(
    scenario: Scenario,
    t: float = 0.0,
    n_frames: int = 5,
    spacing: float = 0.2,
    n_steps: int = 4,
    step: float = 0.25,
) -> Clip:
    """Sample a clip whose keyframe is at time t, history at t - k*spacing,
    and future annotation frames (poses only, zero points) at t + k*step."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    times = [t - (n_frames - 1 - i) * spacing for i in range(n_frames)]
    times += [t + (k + 1) * step for k in range(n_steps)]
    ts = np.array(times)
    pts = [sample_lidar(scenario, float(u)) for u in ts[:n_frames]]
    pts += [np.zeros((0, 3)) for _ in range(n_steps)]
    poses = np.stack([scenario.ego.pose_matrix(float(u)) for u in ts])
    a = len(scenario.actors)
    actor_poses = np.zeros((len(ts), a, 4))
    for fi, u in enumerate(ts):
        for ai, actor in enumerate(scenario.actors):
            center, yaw = actor.box_pose(float(u))
            actor_poses[fi, ai, :3] = center
            actor_poses[fi, ai, 3] = yaw
    return Clip(
        timestamps=ts,
        points=pts,
        ego_poses=poses,
        actor_ids=np.array([x.actor_id for x in scenario.actors], dtype=np.int64),
        actor_categories=np.array([x.category for x in scenario.actors], dtype=np.uint8),
        actor_sizes=np.array([x.size for x in scenario.actors]).reshape(a, 3),
        actor_poses=actor_poses,
        frame_spacing=spacing,
        current_index=n_frames - 1,
    )


def make_clip_pair(
    scenario: Scenario,
    t: float = 0.0,
    pair_offset: float = 0.05,
    n_frames: int = 5,
    spacing: float = 0.2,
    n_steps: int = 4,
    step: float = 0.25,
) -> ClipPair:
    a = make_clip(scenario, t, n_frames, spacing, n_steps, step)
    b = make_clip(scenario, t + pair_offset, n_frames, spacing, n_steps, step)
    pose_a = scenario.ego.pose_matrix(t)
    pose_b = scenario.ego.pose_matrix(t + pair_offset)
    t_ab = np.linalg.inv(pose_b) @ pose_a
    return ClipPair(a, b, t_ab)


@dataclass
class _ActorView:
    actor_id: int
    category: int
    size: tuple


def labels_from_clip(clip: Clip, grid: GridSpec, static_speed: float = STATIC_SPEED) -> LabelGrids:
    """Recompute label grids from a clip's stored annotations (no scenario
    needed, so labels are available for clips read back from disk)."""
    if clip.n_future < 1:
        raise ValueError("clip carries no future annotation frames; labels undefined")
    steps = np.diff(clip.timestamps[clip.current_index :])
    if np.any(np.abs(steps - steps[0]) > 1e-6):
        raise ClipFormatError("future annotation frames are not uniformly spaced")
    step = float(steps[0])
    cur = clip.current_index
    actors = [
        _ActorView(int(clip.actor_ids[i]), int(clip.actor_categories[i]), tuple(clip.actor_sizes[i]))
        for i in range(len(clip.actor_ids))
    ]
    poses_now = [(clip.actor_poses[cur, i, :3], float(clip.actor_poses[cur, i, 3])) for i in range(len(actors))]
    poses_future = [
        [(clip.actor_poses[cur + 1 + k, i, :3], float(clip.actor_poses[cur + 1 + k, i, 3]))
         for k in range(clip.n_future)]
        for i in range(len(actors))
    ]
    return _grid_labels(
        grid,
        clip.ego_poses[cur],
        actors,
        poses_now,
        poses_future,
        clip.points[cur],
        clip.n_future,
        step,
        static_speed,
    )


# ---------------------------------------------------------------------------
# clip file format

_GAP_TOL = 1e-6


def write_clip(path: str, clip: Clip) -> None:
    """Serialize a clip. The input/future split is implicit in the
    timestamps: the reader treats the longest prefix with gaps equal to the
    header frame spacing as input frames, so the future step must differ
    from the frame spacing."""
    f_count = len(clip.timestamps)
    if clip.n_future > 0 and abs(clip.future_step - clip.frame_spacing) <= 2 * _GAP_TOL:
        raise ClipFormatError(
            f"future step {clip.future_step} indistinguishable from frame spacing "
            f"{clip.frame_spacing}; the reader could not recover the keyframe index"
        )
    a_count = len(clip.actor_ids)
    parts = [CLIP_MAGIC, struct.pack("<IIf", f_count, a_count, clip.frame_spacing)]
    for i in range(f_count):
        pts = np.asarray(clip.points[i], dtype=np.float64).reshape(-1, 3)
        parts.append(struct.pack("<d", float(clip.timestamps[i])))
        parts.append(clip.ego_poses[i].astype("<f4").tobytes())
        parts.append(struct.pack("<I", len(pts)))
        parts.append(pts.astype("<f4").tobytes())
    for i in range(a_count):
        parts.append(struct.pack("<IB", int(clip.actor_ids[i]), int(clip.actor_categories[i])))
        parts.append(np.asarray(clip.actor_sizes[i], dtype="<f4").tobytes())
        parts.append(clip.actor_poses[:, i, :].astype("<f4").tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as f:
        f.write(blob)
        f.write(struct.pack("<Q", fnv1a64(blob)))


def read_clip(path: str) -> Clip:
    with open(path, "rb") as f:
        full = f.read()
    if len(full) < len(CLIP_MAGIC) + 8 or full[: len(CLIP_MAGIC)] != CLIP_MAGIC:
        raise ClipFormatError(f"{path}: bad magic; not a clip file")
    raw = full[:-8]
    (stored,) = struct.unpack("<Q", full[-8:])
    computed = fnv1a64(raw)
    if stored != computed:
        raise ClipFormatError(f"{path}: checksum mismatch ({stored:#018x} != {computed:#018x})")
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise ClipFormatError(f"truncated while reading {what} at offset {off}")
        chunk = raw[off : off + n]
        off += n
        return chunk

    take(len(CLIP_MAGIC), "magic")
    f_count, a_count, spacing = struct.unpack("<IIf", take(12, "header"))
    timestamps = np.empty(f_count)
    points = []
    ego_poses = np.empty((f_count, 4, 4))
    for i in range(f_count):
        (timestamps[i],) = struct.unpack("<d", take(8, f"frame {i} timestamp"))
        ego_poses[i] = np.frombuffer(take(64, f"frame {i} pose"), dtype="<f4").reshape(4, 4).astype(np.float64)
        (p,) = struct.unpack("<I", take(4, f"frame {i} point count"))
        pts = np.frombuffer(take(12 * p, f"frame {i} points"), dtype="<f4").reshape(p, 3).astype(np.float64)
        points.append(pts)
    actor_ids = np.empty(a_count, dtype=np.int64)
    actor_categories = np.empty(a_count, dtype=np.uint8)
    actor_sizes = np.empty((a_count, 3))
    actor_poses = np.empty((f_count, a_count, 4))
    for i in range(a_count):
        actor_ids[i], actor_categories[i] = struct.unpack("<IB", take(5, f"actor {i} id"))
        actor_sizes[i] = np.frombuffer(take(12, f"actor {i} size"), dtype="<f4").astype(np.float64)
        actor_poses[:, i, :] = (
            np.frombuffer(take(16 * f_count, f"actor {i} poses"), dtype="<f4").reshape(f_count, 4).astype(np.float64)
        )
    if off != len(raw):
        raise ClipFormatError(f"{len(raw) - off} trailing bytes after last actor")

    if not np.all(np.diff(timestamps) > 0):
        raise ClipFormatError("timestamps not strictly increasing")
    current = 0
    while current + 1 < f_count and abs(timestamps[current + 1] - timestamps[current] - spacing) <= _GAP_TOL:
        current += 1
    return Clip(
        timestamps=timestamps,
        points=points,
        ego_poses=ego_poses,
        actor_ids=actor_ids,
        actor_categories=actor_categories,
        actor_sizes=actor_sizes,
        actor_poses=actor_poses,
        frame_spacing=float(spacing),
        current_index=current,
    )
