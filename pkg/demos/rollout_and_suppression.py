"""Relative offsets, trajectory rollout, and jitter suppression.

The motion head predicts per-step displacement increments; absolute
displacement is their prefix sum. This script first checks that rollout
reconstructs the ground-truth trajectories exactly, then fakes a noisy
prediction to show what the inference-time suppression rule does to cells
the classifier calls background or the state head calls static."""
import os
import sys

import numpy as np

try:
    import motionnet  # noqa: F401
except ImportError:
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from motionnet.bev import GridSpec
from motionnet.inference import BACKGROUND, THETA_STATIC, InferenceOutput, accumulate_displacement
from motionnet.losses import relative_targets
from motionnet.sim import ScenarioConfig, generate_scenario, labels_from_clip, make_clip

GRID = GridSpec(-8.0, 8.0, -8.0, 8.0, -3.0, 2.0, 0.25, 0.25, 0.4)

clip = make_clip(generate_scenario(ScenarioConfig(), 11), n_frames=5, spacing=0.2,
                 n_steps=4, step=0.25)
labels = labels_from_clip(clip, GRID)

# absolute -> relative -> absolute is exact
rel = relative_targets(labels.motion)  # (N, 2, H, W) head layout
rebuilt = accumulate_displacement(np.moveaxis(rel, 1, -1))
print(f"rollout identity: max |rebuilt - labels| = "
      f"{np.abs(rebuilt - labels.motion).max():.2e} m over {labels.motion.shape[0]} steps")

# fake a prediction: ground truth plus everywhere-jitter
rng = np.random.default_rng(0)
noisy = labels.motion + rng.normal(0.0, 0.05, size=labels.motion.shape)
pred = InferenceOutput(
    category=labels.category.astype(np.uint8),
    displacement=noisy.copy(),
    static_prob=np.where(labels.state == 0, 0.9, 0.1),
)

ne = labels.nonempty
static = ne & (labels.state == 0)
moving = ne & (labels.state == 1)
before = np.linalg.norm(pred.displacement[-1] - labels.motion[-1], axis=-1)

# the rule infer() applies when suppress=True
off = (pred.category == BACKGROUND) | (pred.static_prob > THETA_STATIC)
pred.displacement[:, off] = 0.0
after = np.linalg.norm(pred.displacement[-1] - labels.motion[-1], axis=-1)

print(f"\nhorizon error, static cells : {before[static].mean():.4f} m -> "
      f"{after[static].mean():.4f} m after suppression")
print(f"horizon error, moving cells : {before[moving].mean():.4f} m -> "
      f"{after[moving].mean():.4f} m (untouched)")
zeroed = (pred.displacement[-1] == 0).all(axis=-1)
print(f"cells zeroed: {int(zeroed.sum())} of {zeroed.size} "
      f"(background or static probability above 0.5)")
print("\nsuppression trades a tiny bias on truly-moving-but-misjudged cells for")
print("removing all jitter on the static majority; the gain shows up in the")
print("static-group error of the evaluation protocol")
