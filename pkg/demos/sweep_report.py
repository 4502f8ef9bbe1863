"""Run a tiny ablation sweep and print its report.

The matrix format is the same plain text the CLI's ablate command takes:
`base.` lines pin the configuration, `sweep.` lines list the values to cross.
Here we sweep the number of input frames and whether the state head exists,
at toy scale so the four cells train in a couple of minutes total."""
import os
import sys

try:
    import motionnet  # noqa: F401
except ImportError:
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from motionnet.ablation import ablation_run
from motionnet.config import default_config, parse_overrides

MATRIX = """
# toy sweep: input history length x state head
sweep.model.frames = 3, 5
sweep.model.state_head = true, false
base.train.epochs = 2
"""

BASE = parse_overrides(
    {
        "grid.x_min": "-4", "grid.x_max": "4", "grid.y_min": "-4", "grid.y_max": "4",
        "grid.dx": "0.25", "grid.dy": "0.25",
        "model.channels": "8, 16, 32, 64", "model.lift_channels": "8",
        "model.head_channels": "16", "model.n_steps": "4", "model.step_seconds": "0.25",
        "scenario.x_min": "-6", "scenario.x_max": "6",
        "scenario.y_min": "-6", "scenario.y_max": "6",
        "scenario.n_vehicles": "1", "scenario.n_bicycles": "0", "scenario.n_others": "0",
        "loss.beta": "0", "loss.gamma": "0",
        "data.n_clips": "6", "data.n_eval": "3", "data.paired": "false",
        "train.epochs": "2", "train.lr": "0.002",
    },
    default_config(),
)

workdir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "sweep_run")
csv_text, reports = ablation_run(BASE, MATRIX, workdir=workdir)

print(csv_text)
print(f"artifacts per cell under {workdir}/cell_*/")
print("each row is the full evaluation protocol for one trained cell; diff the")
print("label column against the numbers to read the sweep")
