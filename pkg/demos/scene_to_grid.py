"""Generate one synthetic scene, sample LiDAR sweeps, and rasterize them
into the binary occupancy grid the network consumes. Prints grid statistics
and, when matplotlib is available, writes scene_to_grid.png next to this
script."""
import os
import sys

import numpy as np

try:
    import motionnet  # noqa: F401
except ImportError:
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from motionnet.bev import GridSpec, build_input
from motionnet.sim import (
    CATEGORY_NAMES,
    ScenarioConfig,
    generate_scenario,
    labels_from_clip,
    make_clip,
    sample_lidar,
)

SEED = 7
GRID = GridSpec(-8.0, 8.0, -8.0, 8.0, -3.0, 2.0, 0.25, 0.25, 0.4)

scenario = generate_scenario(ScenarioConfig(), SEED)
print(f"scenario {SEED}: {len(scenario.actors)} actors, {len(scenario.clutter)} clutter boxes")
for a in scenario.actors:
    pos, _ = a.trajectory.pose(0.0)
    print(f"  {CATEGORY_NAMES[a.category]:>8s} id {a.actor_id}: at ({pos[0]:+5.1f}, {pos[1]:+5.1f}), "
          f"speed {a.trajectory.speed:.1f} m/s")

points = sample_lidar(scenario, 0.0)
print(f"\nlidar sweep at t=0: {len(points)} points, "
      f"z range [{points[:, 2].min():.2f}, {points[:, 2].max():.2f}] m")

# Five past sweeps ending at the keyframe, ego-aligned, stacked as channels.
clip = make_clip(scenario, t=0.0, n_frames=5, spacing=0.2, n_steps=4, step=0.25)
seq = build_input(clip, GRID, mode="gt")
t, cz, h, w = seq.maps.shape
occupied = seq.maps.any(axis=1)  # cell seen at any height
print(f"input tensor: {t} frames x {cz} height slices x {h}x{w} cells")
print(f"occupancy by frame: {[int(o.sum()) for o in occupied]} cells")

labels = labels_from_clip(clip, GRID)
ne = labels.nonempty
print(f"\nkeyframe labels: {int(ne.sum())} non-empty cells")
for cid, name in enumerate(CATEGORY_NAMES):
    n = int((labels.category[ne] == cid).sum())
    if n:
        print(f"  {name:>10s}: {n:5d} cells")
moving = labels.state == 1
print(f"moving cells: {int((moving & ne).sum())}, "
      f"max horizon displacement {np.linalg.norm(labels.motion[-1], axis=-1).max():.2f} m")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("\nmatplotlib not installed; skipping the figure")
    sys.exit(0)

fig, axes = plt.subplots(1, 3, figsize=(13, 4.2))
axes[0].imshow(occupied[-1], origin="lower", cmap="gray_r")
axes[0].set_title("keyframe occupancy")
axes[1].imshow(labels.category, origin="lower", cmap="tab10", vmin=0, vmax=9)
axes[1].set_title("category labels")
mag = np.linalg.norm(labels.motion[-1], axis=-1)
im = axes[2].imshow(mag, origin="lower", cmap="viridis")
axes[2].set_title("horizon |displacement| (m)")
fig.colorbar(im, ax=axes[2], shrink=0.8)
for ax in axes:
    ax.set_xticks([])
    ax.set_yticks([])
out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "scene_to_grid.png")
fig.tight_layout()
fig.savefig(out, dpi=110)
print(f"\nwrote {out}")
