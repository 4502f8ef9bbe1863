"""Where constant-velocity extrapolation breaks: turning actors.

Builds scenes whose vehicles all follow constant-turn-rate arcs, then
compares the static and constant-velocity baselines against ground truth at
each future step. Constant velocity is exact for straight motion but
accumulates curvature error with the horizon; that gap is what a learned
motion head has to close."""
import os
import sys

import numpy as np

try:
    import motionnet  # noqa: F401
except ImportError:
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from motionnet.baselines import baseline_const_velocity, baseline_static
from motionnet.bev import GridSpec
from motionnet.evaluate import evaluate
from motionnet.sim import ScenarioConfig, generate_scenario, labels_from_clip, make_clip

GRID = GridSpec(-8.0, 8.0, -8.0, 8.0, -3.0, 2.0, 0.25, 0.25, 0.4)
TURNING = ScenarioConfig(n_pedestrians=0, n_bicycles=0, n_others=0, n_clutter=3,
                         vehicle_speed=(5.5, 8.0), stationary_fraction=0.0,
                         turn_fraction=1.0, stop_go_fraction=0.0)
STRAIGHT = ScenarioConfig(n_pedestrians=0, n_bicycles=0, n_others=0, n_clutter=3,
                          vehicle_speed=(5.5, 8.0), stationary_fraction=0.0,
                          turn_fraction=0.0, stop_go_fraction=0.0)
N = 12

for name, cfg in (("straight", STRAIGHT), ("turning", TURNING)):
    clips = [make_clip(generate_scenario(cfg, 100 + i), n_frames=5, spacing=0.2,
                       n_steps=4, step=0.25) for i in range(N)]
    labels = [labels_from_clip(c, GRID) for c in clips]
    print(f"\n{name} scenes ({N} clips):")
    for step in range(4):
        horizon = 0.25 * (step + 1)
        cv_err, st_err = [], []
        for c, lab in zip(clips, labels):
            speed = np.linalg.norm(lab.motion[-1], axis=-1) / (lab.n_steps * lab.step)
            sel = lab.nonempty & (speed > 5.0)
            if not sel.any():
                continue
            cv = baseline_const_velocity(c, GRID, labels=lab).displacement[step]
            st = baseline_static(c, GRID).displacement[step]
            cv_err.append(np.linalg.norm(cv[sel] - lab.motion[step][sel], axis=-1))
            st_err.append(np.linalg.norm(st[sel] - lab.motion[step][sel], axis=-1))
        cv_m = np.concatenate(cv_err).mean()
        st_m = np.concatenate(st_err).mean()
        print(f"  horizon {horizon:.2f}s: const-velocity {cv_m:6.3f} m, static {st_m:6.3f} m "
              f"on fast cells")

# Full protocol numbers for the turning set at the final horizon.
clips = [make_clip(generate_scenario(TURNING, 100 + i), n_frames=5, spacing=0.2,
                   n_steps=4, step=0.25) for i in range(N)]
labels = [labels_from_clip(c, GRID) for c in clips]
cv = evaluate([baseline_const_velocity(c, GRID, labels=l) for c, l in zip(clips, labels)], labels)
st = evaluate([baseline_static(c, GRID) for c in clips], labels)
print("\nspeed-group means at 1 s (turning scenes):")
for g in ("static", "slow", "fast"):
    print(f"  {g:>6s}: const-velocity {cv.mean.get(g, float('nan')):6.3f} m, "
          f"static {st.mean.get(g, float('nan')):6.3f} m  ({cv.counts[g]} cells)")
print("\nconstant velocity nails static and straight cells; its fast-group error on")
print("turning actors is pure curvature miss and grows superlinearly with horizon")
