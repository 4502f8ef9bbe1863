"""Forward-pass inference with cross-head jitter suppression, and the binary
grid-dump format for persisting results.

Suppression zeroes the displacement of cells the classifier calls background
and of cells the state head considers static; it never touches the class or
state outputs themselves.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bev import GridSpec, build_input
from .model import MotionNet
from .nn.checkpoint import CheckpointError, fnv1a64

OUT_MAGIC = b"MNOUT001"
THETA_STATIC = 0.5
BACKGROUND = 0


@dataclass
class InferenceOutput:
    category: np.ndarray  # (H, W) uint8 argmax labels
    displacement: np.ndarray  # (N, H, W, 2) absolute meters, after suppression
    static_prob: np.ndarray  # (H, W) probability the cell is static
    n_categories: int = 5


def accumulate_displacement(rel_motion: np.ndarray) -> np.ndarray:
    """Prefix-sum relative offsets (N, H, W, 2) into absolute displacements."""
    rel = np.asarray(rel_motion, dtype=np.float64)
    if rel.ndim != 4 or rel.shape[-1] != 2:
        raise ValueError(f"expected (N, H, W, 2) offsets, got {rel.shape}")
    return np.cumsum(rel, axis=0)


def infer(
    model: MotionNet,
    clip,
    grid: GridSpec,
    theta_static: float = THETA_STATIC,
    suppress: bool = True,
    mode: str = "gt",
) -> InferenceOutput:
    """Predict per-cell category, state, and absolute displacement for a clip.

    ``mode`` selects the ego-compensation applied to the input frames, and
    must match how the model was trained.
    """
    x = build_input(clip, grid, mode=mode).maps
    pred = model.forward(x[None].astype(np.float64), training=False)

    view = pred.sample(0)
    category = np.argmax(view.class_logits, axis=-1).astype(np.uint8)
    if view.static_logit is not None:
        static_prob = 1.0 / (1.0 + np.exp(-view.static_logit))
    else:
        static_prob = np.zeros(category.shape)

    disp = np.ascontiguousarray(pred.absolute_displacement().data[0].transpose(0, 2, 3, 1))
    if suppress:
        off = (category == BACKGROUND) | (static_prob > theta_static)
        disp[:, off] = 0.0
    return InferenceOutput(category, disp, static_prob, n_categories=model.config.categories)


# -- binary dump --------------------------------------------------------------


def write_inference(path: str, out: InferenceOutput) -> None:
    """Little-endian dump: magic, u32 H/W/N/C, category (u8), static
    probabilities (f32), displacements (f32), then a 64-bit FNV-1a checksum
    of everything before it."""
    h, w = out.category.shape
    n = out.displacement.shape[0]
    if out.displacement.shape != (n, h, w, 2) or out.static_prob.shape != (h, w):
        raise ValueError("inconsistent grid shapes in inference output")
    blob = b"".join(
        (
            OUT_MAGIC,
            struct.pack("<IIII", h, w, n, out.n_categories),
            np.ascontiguousarray(out.category, dtype=np.uint8).tobytes(),
            out.static_prob.astype("<f4").tobytes(),
            out.displacement.astype("<f4").tobytes(),
        )
    )
    with open(path, "wb") as f:
        f.write(blob)
        f.write(struct.pack("<Q", fnv1a64(blob)))


def read_inference(path: str) -> InferenceOutput:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(OUT_MAGIC) + 16 + 8 or raw[: len(OUT_MAGIC)] != OUT_MAGIC:
        raise CheckpointError(f"{path}: not an inference dump (bad magic or truncated)")
    stored = struct.unpack("<Q", raw[-8:])[0]
    body = raw[:-8]
    computed = fnv1a64(body)
    if stored != computed:
        raise CheckpointError(f"{path}: checksum mismatch ({stored:#018x} != {computed:#018x})")
    h, w, n, c = struct.unpack("<IIII", body[8:24])
    off = 24
    need = h * w + 4 * h * w + 4 * n * h * w * 2
    if len(body) - off != need:
        raise CheckpointError(f"{path}: payload is {len(body) - off} bytes, header implies {need}")
    category = np.frombuffer(body, dtype=np.uint8, count=h * w, offset=off).reshape(h, w).copy()
    off += h * w
    static = np.frombuffer(body, dtype="<f4", count=h * w, offset=off).reshape(h, w).astype(np.float64)
    off += 4 * h * w
    disp = (
        np.frombuffer(body, dtype="<f4", count=n * h * w * 2, offset=off)
        .reshape(n, h, w, 2)
        .astype(np.float64)
    )
    return InferenceOutput(category, disp, static, n_categories=int(c))


def summary_csv(out: InferenceOutput, category_names=None) -> str:
    """Per-category roll-up of an inference result: cell counts and the
    magnitude of the predicted displacement at the horizon."""
    final = np.linalg.norm(out.displacement[-1], axis=-1)
    lines = ["category,name,cells,mean_final_disp,max_final_disp,static_fraction"]
    for c in range(out.n_categories):
        sel = out.category == c
        name = category_names[c] if category_names else str(c)
        if not sel.any():
            lines.append(f"{c},{name},0,,,")
            continue
        lines.append(
            f"{c},{name},{int(sel.sum())},{final[sel].mean():.6g},{final[sel].max():.6g},"
            f"{(out.static_prob[sel] > THETA_STATIC).mean():.6g}"
        )
    return "\n".join(lines) + "\n"
