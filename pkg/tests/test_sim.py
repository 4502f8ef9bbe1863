"""Scenario generation, LiDAR sampling, ground-truth labels, clip files."""
import numpy as np
import pytest
from dataclasses import replace

import oracles
from motionnet import sim
from motionnet.bev import GridSpec, voxelize

DESK_GRID = GridSpec(-8, 8, -8, 8, -3, 2, 0.25, 0.25, 0.4)


def desk_config(**kw):
    return sim.ScenarioConfig(**kw)


# ---------------------------------------------------------------------------
# trajectories


def test_straight_trajectory_positions():
    tr = sim.PlanarTrajectory("straight", (1.0, 2.0), np.pi / 2, speed=2.0)
    p, yaw = tr.pose(1.5)
    np.testing.assert_allclose(p, [1.0, 5.0], atol=1e-12)
    assert yaw == np.pi / 2
    np.testing.assert_allclose(tr.velocity(0.3), [0.0, 2.0], atol=1e-12)


def test_turn_trajectory_follows_circle():
    tr = sim.PlanarTrajectory("turn", (0.0, 0.0), 0.0, speed=2.0, turn_rate=0.5)
    # turn center at radius v/w to the left
    center = np.array([0.0, 4.0])
    for t in (0.0, 0.7, 2.0, -1.0):
        p, yaw = tr.pose(t)
        np.testing.assert_allclose(np.linalg.norm(p - center), 4.0, atol=1e-9)
        assert yaw == pytest.approx(0.5 * t)
        # velocity tangent to the circle, magnitude = speed
        v = tr.velocity(t)
        np.testing.assert_allclose(np.linalg.norm(v), 2.0, atol=1e-9)
        np.testing.assert_allclose(np.dot(v, p - center), 0.0, atol=1e-9)


def test_stop_and_go_accumulates_only_go_time():
    tr = sim.PlanarTrajectory("stop_and_go", (0.0, 0.0), 0.0, speed=1.0, go_time=1.0, stop_time=1.0, phase=0.0)
    assert tr.pose(0.5)[0][0] == pytest.approx(0.5)
    assert tr.pose(1.0)[0][0] == pytest.approx(1.0)
    assert tr.pose(1.7)[0][0] == pytest.approx(1.0)  # stopped
    assert tr.pose(2.5)[0][0] == pytest.approx(1.5)  # going again
    assert np.linalg.norm(tr.velocity(1.5)) == 0.0
    assert np.linalg.norm(tr.velocity(2.5)) == 1.0


def test_trajectory_continuity():
    rng = np.random.default_rng(3)
    for kind in ("straight", "turn", "stop_and_go", "stationary"):
        tr = sim.PlanarTrajectory(
            kind, (rng.uniform(-2, 2), rng.uniform(-2, 2)), rng.uniform(-3, 3),
            speed=2.0, turn_rate=0.6, phase=0.3,
        )
        ts = np.linspace(-2, 4, 600)
        pos = np.array([tr.pose(t)[0] for t in ts])
        jumps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        assert jumps.max() < 0.05


# ---------------------------------------------------------------------------
# scenario generation


def test_zero_actor_scenario_is_background_only():
    cfg = desk_config(n_vehicles=0, n_pedestrians=0, n_bicycles=0, n_others=0, n_clutter=0)
    sc = sim.generate_scenario(cfg, 1)
    assert sc.actors == () and sc.clutter == ()
    labels = sim.derive_cell_gt(sc, 0.0, 2, 0.25, DESK_GRID)
    assert not labels.category.any()
    assert not labels.motion.any()


def test_requested_counts_and_disjoint_boxes():
    cfg = desk_config(n_vehicles=2, n_pedestrians=1, n_bicycles=1, n_others=1, n_clutter=3)
    sc = sim.generate_scenario(cfg, 7)
    cats = [a.category for a in sc.actors]
    assert cats.count(1) == 2 and cats.count(2) == 1 and cats.count(3) == 1 and cats.count(4) == 1
    assert len(sc.clutter) == 3
    boxes = list(sc.actors) + list(sc.clutter)
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            (ca, yawa), (cb, yawb) = a.box_pose(0.0), b.box_pose(0.0)
            assert not sim._obbs_overlap(
                ca[:2], yawa, a.size[0], a.size[1], cb[:2], yawb, b.size[0], b.size[1]
            )


def test_equal_seeds_serialize_identically(tmp_path):
    cfg = desk_config()
    for name, seed in (("a", 11), ("b", 11)):
        sc = sim.generate_scenario(cfg, seed)
        sim.write_clip(str(tmp_path / f"{name}.mnclip"), sim.make_clip(sc))
    assert (tmp_path / "a.mnclip").read_bytes() == (tmp_path / "b.mnclip").read_bytes()


def test_infeasible_placement_raises():
    cfg = desk_config(x_min=-3, x_max=3, y_min=-3, y_max=3, n_vehicles=12)
    with pytest.raises(sim.SimulationError, match="place"):
        sim.generate_scenario(cfg, 0)


# ---------------------------------------------------------------------------
# lidar sampling


def test_out_of_range_actor_contributes_nothing():
    cfg = desk_config(
        x_min=-100, x_max=100, y_min=-100, y_max=100,
        n_vehicles=0, n_pedestrians=0, n_bicycles=0, n_others=0, n_clutter=0,
        ground_density=0.0, range_max=10.0,
    )
    sc = sim.generate_scenario(cfg, 0)
    far = sim.RigidActor(1, 1, (4.0, 2.0, 1.5), sim.PlanarTrajectory("stationary", (60.0, 0.0), 0.0))
    sc = replace(sc, actors=(far,))
    assert len(sim.sample_lidar(sc, 0.0)) == 0


def test_noiseless_points_lie_on_box_surface():
    cfg = desk_config(
        n_vehicles=1, n_pedestrians=0, n_bicycles=0, n_others=0, n_clutter=0,
        ground_density=0.0, noise_sigma=0.0, ego_stationary_fraction=1.0,
    )
    sc = sim.generate_scenario(cfg, 5)
    actor = sc.actors[0]
    for t in (0.0, 0.4):
        pts_ego = sim.sample_lidar(sc, t)
        assert len(pts_ego) > 50
        pose = sc.ego.pose_matrix(t)
        pts = pts_ego @ pose[:3, :3].T + pose[:3, 3]
        center, yaw = actor.box_pose(t)
        for p in pts[:: max(1, len(pts) // 40)]:
            assert oracles.point_to_box_surface_distance(p, center, yaw, actor.size) < 1e-9


def test_density_scales_expected_count():
    base = desk_config(n_vehicles=1, n_pedestrians=0, n_bicycles=0, n_others=0,
                       n_clutter=0, ground_density=0.0)
    counts = []
    for density in (8.0, 16.0):
        cfg = replace(base, point_density=density)
        total = 0
        for seed in range(100):
            sc = sim.generate_scenario(cfg, seed)
            total += len(sim.sample_lidar(sc, 0.0))
        counts.append(total / 100)
    ratio = counts[1] / counts[0]
    assert 1.6 < ratio < 2.4  # doubling density ~ doubles points (+-20%)


def test_sample_lidar_deterministic_per_time():
    sc = sim.generate_scenario(desk_config(), 9)
    a = sim.sample_lidar(sc, 0.4)
    b = sim.sample_lidar(sc, 0.4)
    assert a.tobytes() == b.tobytes()
    c = sim.sample_lidar(sc, 0.6)
    assert len(c) == 0 or a.shape != c.shape or a.tobytes() != c.tobytes()


# ---------------------------------------------------------------------------
# ground-truth labels


def _single_actor_scenario(traj, category=1, size=(4.0, 2.0, 1.6), static_ego=True):
    cfg = desk_config(n_vehicles=0, n_pedestrians=0, n_bicycles=0, n_others=0, n_clutter=0,
                      ego_stationary_fraction=1.0 if static_ego else 0.0)
    sc = sim.generate_scenario(cfg, 0)
    return replace(sc, actors=(sim.RigidActor(1, category, size, traj),))


def test_stationary_actor_motion_zero_state_static():
    sc = _single_actor_scenario(sim.PlanarTrajectory("stationary", (2.0, 1.0), 0.3))
    labels = sim.derive_cell_gt(sc, 0.0, 4, 0.25, DESK_GRID)
    cells = labels.instance == 1
    assert cells.sum() > 50
    assert not labels.motion.any()
    assert (labels.state[cells] == sim.STATE_STATIC).all()


def test_pure_translation_motion_uniform():
    sc = _single_actor_scenario(sim.PlanarTrajectory("straight", (0.0, -2.0), 0.0, speed=4.0))
    labels = sim.derive_cell_gt(sc, 0.0, 4, 0.25, DESK_GRID)
    cells = labels.instance == 1
    for k in range(4):
        step_motion = labels.motion[k][cells]
        np.testing.assert_allclose(step_motion[:, 0], 4.0 * 0.25 * (k + 1), atol=1e-9)
        np.testing.assert_allclose(step_motion[:, 1], 0.0, atol=1e-9)
    assert (labels.state[cells] == sim.STATE_MOVING).all()


def test_yaw_quarter_turn_formula_case():
    # box spins 90 degrees about its center while the center moves +0.5 in x:
    # a cell at offset (1, 0) must land at offset (0, 1), i.e. motion (-0.5, 1)
    # once the center shift is included
    c0 = np.array([2.0, 1.0, 0.8])
    cell = c0[:2] + np.array([1.0, 0.0])
    got = sim._cell_motion(cell[None, :], c0, 0.0, c0 + np.array([0.5, 0.0, 0.0]), np.pi / 2)[0]
    np.testing.assert_allclose(got, [-0.5, 1.0], atol=1e-12)


def test_cell_motion_matches_oracle_random():
    rng = np.random.default_rng(21)
    for _ in range(200):
        c0 = rng.uniform(-5, 5, 3)
        c1 = rng.uniform(-5, 5, 3)
        y0, y1 = rng.uniform(-np.pi, np.pi, 2)
        x = rng.uniform(-5, 5, 2)
        got = sim._cell_motion(x[None, :], c0, y0, c1, y1)[0]
        want = oracles.rigid_motion_of_point(x, c0[:2], y0, c1[:2], y1)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_moved_cells_land_inside_horizon_box():
    rng = np.random.default_rng(4)
    half_diag = 0.5 * np.hypot(DESK_GRID.dx, DESK_GRID.dy)
    for seed in range(20):
        kind = ("straight", "turn", "stop_and_go")[seed % 3]
        tr = sim.PlanarTrajectory(
            kind, (rng.uniform(-3, 3), rng.uniform(-3, 3)), rng.uniform(-np.pi, np.pi),
            speed=rng.uniform(0.5, 4.0), turn_rate=rng.uniform(0.3, 0.8), phase=rng.uniform(0, 3),
        )
        sc = _single_actor_scenario(tr)
        labels = sim.derive_cell_gt(sc, 0.0, 4, 0.25, DESK_GRID)
        cells = labels.instance == 1
        if not cells.any():
            continue
        centers = DESK_GRID.cell_centers()[cells]
        moved = centers + labels.motion[-1][cells]
        center, yaw = sc.actors[0].box_pose(1.0)
        l, w = sc.actors[0].size[0], sc.actors[0].size[1]
        d = moved - center[:2]
        c, s = np.cos(yaw), np.sin(yaw)
        lx = np.abs(c * d[:, 0] + s * d[:, 1])
        ly = np.abs(-s * d[:, 0] + c * d[:, 1])
        assert (lx <= l / 2 + half_diag).all() and (ly <= w / 2 + half_diag).all()


def test_rigidity_uniform_motion_iff_constant_yaw():
    straight = _single_actor_scenario(sim.PlanarTrajectory("straight", (0.0, 0.0), 0.7, speed=3.0))
    labels = sim.derive_cell_gt(straight, 0.0, 4, 0.25, DESK_GRID)
    cells = labels.instance == 1
    spread = labels.motion[-1][cells].std(axis=0)
    np.testing.assert_allclose(spread, 0.0, atol=1e-12)

    turning = _single_actor_scenario(sim.PlanarTrajectory("turn", (0.0, 0.0), 0.7, speed=3.0, turn_rate=0.6))
    labels = sim.derive_cell_gt(turning, 0.0, 4, 0.25, DESK_GRID)
    cells = labels.instance == 1
    assert labels.motion[-1][cells].std(axis=0).max() > 1e-3


def test_overlap_tiebreak_nearest_center():
    a = sim.RigidActor(1, 1, (4.0, 2.0, 1.5), sim.PlanarTrajectory("stationary", (0.0, 0.0), 0.0))
    b = sim.RigidActor(2, 1, (4.0, 2.0, 1.5), sim.PlanarTrajectory("stationary", (1.0, 0.0), 0.0))
    sc = _single_actor_scenario(a.trajectory)
    sc = replace(sc, actors=(a, b))
    labels = sim.derive_cell_gt(sc, 0.0, 1, 0.25, DESK_GRID)
    centers = DESK_GRID.cell_centers()
    both = labels.instance > 0
    da = np.linalg.norm(centers - np.array([0.0, 0.0]), axis=-1)
    db = np.linalg.norm(centers - np.array([1.0, 0.0]), axis=-1)
    assert (labels.instance[both & (da < db)] == 1).all()
    assert (labels.instance[both & (db < da)] == 2).all()


def test_instance_category_coupling_and_background_motion():
    sc = sim.generate_scenario(desk_config(), 23)
    labels = sim.derive_cell_gt(sc, 0.0, 4, 0.25, DESK_GRID)
    assert ((labels.instance > 0) == (labels.category != 0)).all()
    bg = labels.category == 0
    assert not labels.motion[:, bg].any()
    assert (labels.state[bg] == sim.STATE_STATIC).all()


def test_state_threshold_exact():
    # horizon-average speed just under/over the threshold
    slow = _single_actor_scenario(sim.PlanarTrajectory("straight", (0.0, 0.0), 0.0, speed=0.19))
    fastish = _single_actor_scenario(sim.PlanarTrajectory("straight", (0.0, 0.0), 0.0, speed=0.21))
    for sc, want in ((slow, sim.STATE_STATIC), (fastish, sim.STATE_MOVING)):
        labels = sim.derive_cell_gt(sc, 0.0, 4, 0.25, DESK_GRID)
        cells = labels.instance == 1
        assert (labels.state[cells] == want).all()


# ---------------------------------------------------------------------------
# clips and pairs


def test_clip_timestamps_and_shapes():
    sc = sim.generate_scenario(desk_config(), 2)
    clip = sim.make_clip(sc, 0.0, n_frames=5, spacing=0.2, n_steps=4, step=0.25)
    np.testing.assert_allclose(clip.timestamps[:5], [-0.8, -0.6, -0.4, -0.2, 0.0], atol=1e-12)
    np.testing.assert_allclose(clip.timestamps[5:], [0.25, 0.5, 0.75, 1.0], atol=1e-12)
    assert clip.current_index == 4 and clip.n_future == 4
    assert all(len(p) == 0 for p in clip.points[5:])
    assert clip.ego_poses.shape == (9, 4, 4)
    assert clip.actor_poses.shape == (9, len(sc.actors), 4)


def test_pair_static_ego_identity_transform():
    cfg = desk_config(ego_stationary_fraction=1.0)
    sc = sim.generate_scenario(cfg, 3)
    pair = sim.make_clip_pair(sc, 0.0)
    np.testing.assert_allclose(pair.t_ab, np.eye(4), atol=1e-12)


def test_pair_transform_matches_pose_composition():
    cfg = desk_config(ego_stationary_fraction=0.0, ego_turn_fraction=1.0, ego_speed=(2.0, 4.0))
    sc = sim.generate_scenario(cfg, 8)
    pair = sim.make_clip_pair(sc, 0.0, pair_offset=0.05)
    want = np.linalg.inv(sc.ego.pose_matrix(0.05)) @ sc.ego.pose_matrix(0.0)
    np.testing.assert_allclose(pair.t_ab, want, atol=1e-12)
    # rotating ego: a chord of the arc, 2 r sin(w dt / 2)
    tr = sc.ego.trajectory
    chord = 2.0 * (tr.speed / abs(tr.turn_rate)) * np.sin(abs(tr.turn_rate) * 0.05 / 2)
    assert np.linalg.norm(pair.t_ab[:2, 3]) == pytest.approx(chord, rel=1e-9)


def test_pair_transform_translating_ego_half_meter():
    cfg = desk_config(ego_stationary_fraction=0.0, ego_turn_fraction=0.0, ego_speed=(10.0, 10.0))
    sc = sim.generate_scenario(cfg, 8)
    assert sc.ego.trajectory.kind == "straight" and sc.ego.trajectory.speed == 10.0
    pair = sim.make_clip_pair(sc, 0.0, pair_offset=0.05)
    # frame A's origin sits half a meter behind frame B's
    np.testing.assert_allclose(pair.t_ab[:3, 3], [-0.5, 0.0, 0.0], atol=1e-9)


def test_labels_from_clip_match_derive_cell_gt():
    sc = sim.generate_scenario(desk_config(), 31)
    clip = sim.make_clip(sc, 0.0)
    a = sim.derive_cell_gt(sc, 0.0, 4, 0.25, DESK_GRID)
    b = sim.labels_from_clip(clip, DESK_GRID)
    np.testing.assert_array_equal(a.category, b.category)
    np.testing.assert_array_equal(a.instance, b.instance)
    np.testing.assert_array_equal(a.state, b.state)
    np.testing.assert_array_equal(a.nonempty, b.nonempty)
    np.testing.assert_allclose(a.motion, b.motion, atol=1e-12)


# ---------------------------------------------------------------------------
# clip file format


def test_clip_file_roundtrip(tmp_path):
    sc = sim.generate_scenario(desk_config(), 13)
    clip = sim.make_clip(sc)
    path = str(tmp_path / "c.mnclip")
    sim.write_clip(path, clip)
    back = sim.read_clip(path)
    assert back.current_index == clip.current_index
    assert back.n_future == clip.n_future
    np.testing.assert_array_equal(back.timestamps, clip.timestamps)
    np.testing.assert_array_equal(back.actor_ids, clip.actor_ids)
    np.testing.assert_array_equal(back.actor_categories, clip.actor_categories)
    for i in range(len(clip.points)):
        np.testing.assert_allclose(back.points[i], clip.points[i], atol=1e-6)
    np.testing.assert_allclose(back.ego_poses, clip.ego_poses, atol=1e-6)
    np.testing.assert_allclose(back.actor_poses, clip.actor_poses, atol=1e-5)

    # writing the read-back clip reproduces the file byte for byte
    path2 = str(tmp_path / "c2.mnclip")
    sim.write_clip(path2, back)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_clip_file_rejects_ambiguous_future_step(tmp_path):
    sc = sim.generate_scenario(desk_config(), 1)
    clip = sim.make_clip(sc, 0.0, n_frames=5, spacing=0.2, n_steps=2, step=0.2)
    with pytest.raises(sim.ClipFormatError, match="indistinguishable"):
        sim.write_clip(str(tmp_path / "bad.mnclip"), clip)


def test_clip_file_corruption_truncation_magic_errors(tmp_path):
    sc = sim.generate_scenario(desk_config(), 1)
    path = str(tmp_path / "c.mnclip")
    sim.write_clip(path, sim.make_clip(sc))
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[: len(raw) - 7])
    with pytest.raises(sim.ClipFormatError, match="checksum"):
        sim.read_clip(path)
    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0xFF
    open(path, "wb").write(bytes(flipped))
    with pytest.raises(sim.ClipFormatError, match="checksum"):
        sim.read_clip(path)
    open(path, "wb").write(b"WRONGMAG" + raw[8:])
    with pytest.raises(sim.ClipFormatError, match="magic"):
        sim.read_clip(path)


def test_keyframe_nonempty_matches_labels():
    sc = sim.generate_scenario(desk_config(), 17)
    clip = sim.make_clip(sc)
    labels = sim.derive_cell_gt(sc, 0.0, 4, 0.25, DESK_GRID)
    key_map = voxelize(clip.points[clip.current_index], DESK_GRID)
    np.testing.assert_array_equal(key_map.any(axis=0), labels.nonempty)
