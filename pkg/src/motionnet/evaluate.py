"""Displacement-error and classification metrics over speed groups.

Cells are bucketed by their ground-truth speed (the horizon displacement
magnitude divided by the horizon): static below the shared static threshold,
slow up to 5 m/s, fast above. Errors are L2 distances between predicted and
true displacement, reported at the final step by default or averaged over
all steps on request. Classification is scored over non-empty cells only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .sim import CATEGORY_NAMES, STATIC_SPEED

SLOW_LIMIT = 5.0
GROUP_NAMES = ("static", "slow", "fast")


@dataclass
class EvalReport:
    mean: dict  # group name -> mean L2 error (absent groups missing)
    median: dict  # group name -> median L2 error
    counts: dict  # group name -> cell count (always present, may be 0)
    oa: float
    mca: float
    per_category: list  # accuracy per category id, None where absent
    nonempty_cells: int

    @staticmethod
    def csv_header(n_categories: int = len(CATEGORY_NAMES)) -> str:
        cols = ["label"]
        for g in GROUP_NAMES:
            cols += [f"{g}_mean", f"{g}_median", f"{g}_count"]
        cols += ["oa", "mca"]
        names = list(CATEGORY_NAMES) + [str(i) for i in range(len(CATEGORY_NAMES), n_categories)]
        cols += [f"acc_{names[i]}" for i in range(n_categories)]
        cols += ["nonempty_cells"]
        return ",".join(cols)

    def csv_row(self, label: str) -> str:
        def num(v) -> str:
            return "" if v is None else f"{v:.17g}"

        cols = [label]
        for g in GROUP_NAMES:
            cols += [num(self.mean.get(g)), num(self.median.get(g)), str(self.counts.get(g, 0))]
        cols += [num(self.oa), num(self.mca)]
        cols += [num(a) for a in self.per_category]
        cols += [str(self.nonempty_cells)]
        return ",".join(cols)


def speed_group(speed: np.ndarray, eps_static: float = STATIC_SPEED) -> np.ndarray:
    """0 = static, 1 = slow, 2 = fast."""
    g = np.ones(speed.shape, dtype=np.int8)
    g[speed < eps_static] = 0
    g[speed > SLOW_LIMIT] = 2
    return g


def evaluate(
    outputs: Sequence,
    labels: Sequence,
    all_steps: bool = False,
    eps_static: float = STATIC_SPEED,
    n_categories: Optional[int] = None,
) -> EvalReport:
    """Score inference outputs against label grids, clip by clip, pooling
    cells across the whole set. Empty speed groups are omitted from the mean
    and median maps rather than reported as zero."""
    if len(outputs) != len(labels):
        raise ValueError(f"{len(outputs)} outputs vs {len(labels)} label grids")
    if not outputs:
        raise ValueError("nothing to evaluate")
    if n_categories is None:
        n_categories = max(int(o.n_categories) for o in outputs)

    errors = {g: [] for g in GROUP_NAMES}
    correct = np.zeros(n_categories, dtype=np.int64)
    totals = np.zeros(n_categories, dtype=np.int64)

    for out, lab in zip(outputs, labels):
        ne = lab.nonempty
        if out.category.shape != ne.shape or out.displacement.shape != lab.motion.shape:
            raise ValueError(
                f"output grids {out.displacement.shape} do not match labels {lab.motion.shape}"
            )
        horizon = lab.n_steps * lab.step
        speed = np.linalg.norm(lab.motion[-1], axis=-1) / horizon
        grp = speed_group(speed, eps_static)

        if all_steps:
            err = np.linalg.norm(out.displacement - lab.motion, axis=-1).mean(axis=0)
        else:
            err = np.linalg.norm(out.displacement[-1] - lab.motion[-1], axis=-1)

        for gi, g in enumerate(GROUP_NAMES):
            sel = ne & (grp == gi)
            if sel.any():
                errors[g].append(err[sel])

        pred_cat = out.category[ne]
        gt_cat = lab.category[ne]
        for c in range(n_categories):
            cs = gt_cat == c
            totals[c] += int(cs.sum())
            correct[c] += int((pred_cat[cs] == c).sum())

    mean = {}
    median = {}
    counts = {}
    for g in GROUP_NAMES:
        if errors[g]:
            joined = np.concatenate(errors[g])
            mean[g] = float(joined.mean())
            median[g] = float(np.median(joined))
            counts[g] = int(joined.size)
        else:
            counts[g] = 0

    nonempty_cells = int(totals.sum())
    oa = float(correct.sum() / nonempty_cells) if nonempty_cells else 0.0
    per_category = [
        float(correct[c] / totals[c]) if totals[c] else None for c in range(n_categories)
    ]
    present = [a for a in per_category if a is not None]
    mca = float(np.mean(present)) if present else 0.0
    return EvalReport(mean, median, counts, oa, mca, per_category, nonempty_cells)
