"""Spatio-temporal pyramid network with cell-classification, motion, and
state heads.

The encoder stacks four spatio-temporal convolution (STC) blocks: two 3x3
spatial convs per block (the first conv of blocks 2-4 strides 2) and, where
the fusion schedule assigns one, a pseudo-1D temporal conv that shrinks T by
k_t - 1. Every level's output is globally max-pooled over time and fed to an
upsampling decoder through lateral concatenation. Three two-layer conv heads
read the full-resolution feature map.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Optional

import numpy as np

from . import nn
from .bev import GridSpec
from .nn.checkpoint import load_checkpoint, save_checkpoint

_FUSION_MODES = ("early", "middle", "late")


@dataclass(frozen=True)
class StpnConfig:
    in_channels: int = 13
    frames: int = 5
    channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    lift_channels: int = 32
    head_channels: int = 32
    temporal_kernel: int = 3
    fusion: str = "middle"
    categories: int = 5
    n_steps: int = 20
    step_seconds: float = 0.05
    batch_norm: bool = True
    state_head: bool = True
    relative_offsets: bool = True

    def __post_init__(self):
        if self.fusion not in _FUSION_MODES:
            raise ValueError(f"fusion must be one of {_FUSION_MODES}, got {self.fusion!r}")
        if len(self.channels) != 4:
            raise ValueError("channels must list the four STC block widths")
        if self.frames < 1 or self.n_steps < 1 or self.categories < 2:
            raise ValueError("frames, n_steps must be >= 1 and categories >= 2")
        if self.temporal_kernel < 2:
            raise ValueError("temporal kernel must be >= 2")

    @property
    def temporal_levels(self) -> tuple[int, ...]:
        """Which STC blocks carry temporal convolutions."""
        return {"early": (), "middle": (1, 2), "late": (3, 4)}[self.fusion]

    @property
    def n_pre_blocks(self) -> int:
        return 2 if self.fusion == "early" else 0

    def block_input_lengths(self) -> tuple[int, ...]:
        """Temporal length entering each STC block (after any early-fusion
        pre-blocks). A scheduled temporal conv only fires when T >= k_t, so
        short frame stacks degrade gracefully."""
        t = self.frames
        for _ in range(self.n_pre_blocks):
            if t >= self.temporal_kernel:
                t = t - self.temporal_kernel + 1
        out = []
        for level in (1, 2, 3, 4):
            out.append(t)
            if level in self.temporal_levels and t >= self.temporal_kernel:
                t = t - self.temporal_kernel + 1
        return tuple(out)


@dataclass
class Prediction:
    """Raw head outputs for a batch, still attached to the graph."""

    class_logits: nn.Tensor  # (B, C, H, W)
    motion: nn.Tensor  # (B, N, 2, H, W); relative offsets unless configured otherwise
    static_logit: Optional[nn.Tensor]  # (B, H, W) or None when the head is disabled
    config: StpnConfig

    def absolute_displacement(self) -> nn.Tensor:
        """(B, N, 2, H, W) displacement from the current time to each future
        step; the prefix sum of the relative offsets."""
        if self.config.relative_offsets:
            return nn.cumsum(self.motion, 1)
        return self.motion

    def sample(self, b: int = 0) -> SimpleNamespace:
        """Detached numpy views of one batch element in the documented
        layouts: class logits (H, W, C), motion (N, H, W, 2), static (H, W)."""
        out = SimpleNamespace(
            class_logits=np.ascontiguousarray(self.class_logits.data[b].transpose(1, 2, 0)),
            rel_motion=np.ascontiguousarray(self.motion.data[b].transpose(0, 2, 3, 1)),
            static_logit=None,
        )
        if self.static_logit is not None:
            out.static_logit = self.static_logit.data[b].copy()
        return out


class MotionNet:
    """The full network: channel lift, STC pyramid, decoder, three heads.

    Parameters and batch-norm running statistics live in named registries so
    checkpoints are order-stable and self-describing.
    """

    def __init__(self, config: StpnConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, nn.Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.last_block_lengths: Optional[tuple[int, ...]] = None
        self._rng = np.random.default_rng(seed)
        self._build()

    # -- construction -------------------------------------------------------

    def _conv_init(self, shape, fan_in: int) -> np.ndarray:
        return self._rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)

    def _add_conv(self, name: str, c_in: int, c_out: int, k: int = 3, zero: bool = False) -> None:
        w = np.zeros((c_out, c_in, k, k)) if zero else self._conv_init((c_out, c_in, k, k), c_in * k * k)
        self.params[f"{name}.weight"] = nn.Parameter(f"{name}.weight", w)
        self.params[f"{name}.bias"] = nn.Parameter(f"{name}.bias", np.zeros(c_out))

    def _add_lift(self, name: str, c_in: int, c_out: int, zero: bool = False) -> None:
        w = np.zeros((c_out, c_in)) if zero else self._conv_init((c_out, c_in), c_in)
        self.params[f"{name}.weight"] = nn.Parameter(f"{name}.weight", w)
        self.params[f"{name}.bias"] = nn.Parameter(f"{name}.bias", np.zeros(c_out))

    def _add_tconv(self, name: str, c: int, kt: int) -> None:
        w = self._conv_init((c, c, kt), c * kt)
        self.params[f"{name}.weight"] = nn.Parameter(f"{name}.weight", w)
        self.params[f"{name}.bias"] = nn.Parameter(f"{name}.bias", np.zeros(c))

    def _add_bn(self, name: str, c: int) -> None:
        if not self.config.batch_norm:
            return
        self.params[f"{name}.gamma"] = nn.Parameter(f"{name}.gamma", np.ones(c))
        self.params[f"{name}.beta"] = nn.Parameter(f"{name}.beta", np.zeros(c))
        self.buffers[f"{name}.mean"] = np.zeros(c)
        self.buffers[f"{name}.var"] = np.ones(c)

    def _build(self) -> None:
        cfg = self.config
        kt = cfg.temporal_kernel
        self._add_conv("lift.conv1", cfg.in_channels, cfg.lift_channels)
        self._add_bn("lift.conv1.bn", cfg.lift_channels)
        self._add_conv("lift.conv2", cfg.lift_channels, cfg.lift_channels)
        self._add_bn("lift.conv2.bn", cfg.lift_channels)

        c = cfg.lift_channels
        for i in range(1, cfg.n_pre_blocks + 1):
            self._add_conv(f"pre{i}.conv1", c, c)
            self._add_bn(f"pre{i}.conv1.bn", c)
            self._add_conv(f"pre{i}.conv2", c, c)
            self._add_bn(f"pre{i}.conv2.bn", c)
            self._add_tconv(f"pre{i}.tconv", c, kt)
            self._add_bn(f"pre{i}.tconv.bn", c)

        for level in (1, 2, 3, 4):
            c_out = cfg.channels[level - 1]
            self._add_conv(f"stc{level}.conv1", c, c_out)
            self._add_bn(f"stc{level}.conv1.bn", c_out)
            self._add_conv(f"stc{level}.conv2", c_out, c_out)
            self._add_bn(f"stc{level}.conv2.bn", c_out)
            if level in cfg.temporal_levels:
                self._add_tconv(f"stc{level}.tconv", c_out, kt)
                self._add_bn(f"stc{level}.tconv.bn", c_out)
            c = c_out

        # decoder mirrors the encoder widths on the way back up
        for level in (3, 2, 1):
            c_out = cfg.channels[level - 1]
            self._add_conv(f"dec{level}.conv", c + cfg.channels[level - 1], c_out)
            self._add_bn(f"dec{level}.conv.bn", c_out)
            c = c_out

        heads = [("head_cls", cfg.categories), ("head_motion", cfg.n_steps * 2)]
        if cfg.state_head:
            heads.append(("head_state", 1))
        for name, out_ch in heads:
            self._add_conv(f"{name}.conv1", c, cfg.head_channels)
            self._add_bn(f"{name}.conv1.bn", cfg.head_channels)
            self._add_lift(f"{name}.out", cfg.head_channels, out_ch, zero=True)

    # -- forward ------------------------------------------------------------

    def _bn_relu(self, x: nn.Tensor, name: str, training: bool, update_stats: bool) -> nn.Tensor:
        if self.config.batch_norm:
            x = nn.batch_norm2d(
                x,
                self.params[f"{name}.gamma"].tensor,
                self.params[f"{name}.beta"].tensor,
                self.buffers[f"{name}.mean"],
                self.buffers[f"{name}.var"],
                training=training,
                update_stats=update_stats,
            )
        return nn.relu(x)

    def _conv_frames(self, x: nn.Tensor, name: str, stride: int, training: bool, update_stats: bool) -> nn.Tensor:
        """Apply a 2D conv (+bn+relu) to every frame of a (B,T,C,H,W) stack by
        folding T into the batch axis."""
        b, t, c, h, w = x.shape
        flat = nn.reshape(x, (b * t, c, h, w))
        out = nn.conv2d(flat, self.params[f"{name}.weight"].tensor, self.params[f"{name}.bias"].tensor, stride, 1)
        out = self._bn_relu(out, f"{name}.bn", training, update_stats)
        _, co, ho, wo = out.shape
        return nn.reshape(out, (b, t, co, ho, wo))

    def _tconv(self, x: nn.Tensor, name: str, training: bool, update_stats: bool) -> nn.Tensor:
        out = nn.conv_temporal(x, self.params[f"{name}.weight"].tensor, self.params[f"{name}.bias"].tensor)
        b, t, c, h, w = out.shape
        flat = nn.reshape(out, (b * t, c, h, w))
        flat = self._bn_relu(flat, f"{name}.bn", training, update_stats)
        return nn.reshape(flat, (b, t, c, h, w))

    def _stc(self, x: nn.Tensor, name: str, stride: int, temporal: bool, training: bool, update_stats: bool) -> nn.Tensor:
        x = self._conv_frames(x, f"{name}.conv1", stride, training, update_stats)
        x = self._conv_frames(x, f"{name}.conv2", 1, training, update_stats)
        if temporal and x.shape[1] >= self.config.temporal_kernel:
            x = self._tconv(x, f"{name}.tconv", training, update_stats)
        return x

    def forward(self, x, training: bool = False, update_stats: Optional[bool] = None) -> Prediction:
        """x: (B, T, C_z, H, W) array or Tensor, keyframe last. ``training``
        selects batch-norm batch statistics; ``update_stats`` (default:
        same as ``training``) controls whether running buffers move."""
        cfg = self.config
        if update_stats is None:
            update_stats = training
        if not isinstance(x, nn.Tensor):
            x = nn.Tensor(np.asarray(x, dtype=np.float64))
        if x.ndim != 5:
            raise nn.ShapeError(f"input must be (B,T,C,H,W), got ndim {x.ndim}")
        b, t, c, h, w = x.shape
        if t != cfg.frames:
            raise nn.ShapeError(f"input has {t} frames, config expects {cfg.frames}")
        if c != cfg.in_channels:
            raise nn.ShapeError(f"input has {c} channels, config expects {cfg.in_channels}")
        if h % 8 or w % 8:
            raise nn.ShapeError(f"H, W must be divisible by 8 (three downsamplings), got {h}x{w}")

        x = self._conv_frames(x, "lift.conv1", 1, training, update_stats)
        x = self._conv_frames(x, "lift.conv2", 1, training, update_stats)

        for i in range(1, cfg.n_pre_blocks + 1):
            x = self._stc(x, f"pre{i}", 1, True, training, update_stats)

        laterals = []
        seen_lengths = []
        for level in (1, 2, 3, 4):
            seen_lengths.append(x.shape[1])
            x = self._stc(
                x, f"stc{level}", 2 if level > 1 else 1, level in cfg.temporal_levels, training, update_stats
            )
            pooled = nn.temporal_max_pool(x)
            bb, _, cc, hh, ww = pooled.shape
            laterals.append(nn.reshape(pooled, (bb, cc, hh, ww)))
        self.last_block_lengths = tuple(seen_lengths)

        d = laterals[3]
        for level in (3, 2, 1):
            d = nn.upsample2x(d)
            d = nn.concat_channels([d, laterals[level - 1]], axis=1)
            d = nn.conv2d(d, self.params[f"dec{level}.conv.weight"].tensor, self.params[f"dec{level}.conv.bias"].tensor, 1, 1)
            d = self._bn_relu(d, f"dec{level}.conv.bn", training, update_stats)

        def head(name: str) -> nn.Tensor:
            hfeat = nn.conv2d(d, self.params[f"{name}.conv1.weight"].tensor, self.params[f"{name}.conv1.bias"].tensor, 1, 1)
            hfeat = self._bn_relu(hfeat, f"{name}.conv1.bn", training, update_stats)
            return nn.linear_lift(hfeat, self.params[f"{name}.out.weight"].tensor, self.params[f"{name}.out.bias"].tensor)

        logits = head("head_cls")
        motion = nn.reshape(head("head_motion"), (b, cfg.n_steps, 2, h, w))
        static = None
        if cfg.state_head:
            static = nn.reshape(head("head_state"), (b, h, w))
        return Prediction(logits, motion, static, cfg)

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> list[nn.Parameter]:
        return list(self.params.values())

    def shared_parameters(self) -> list[nn.Parameter]:
        """Everything below the task heads (the trunk the tasks share)."""
        return [p for name, p in self.params.items() if not name.startswith("head_")]

    def head_parameters(self, head: str) -> list[nn.Parameter]:
        return [p for name, p in self.params.items() if name.startswith(head)]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- persistence --------------------------------------------------------

    _META_FLAGS = ("batch_norm", "state_head", "relative_offsets")

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        cfg = self.config
        out["meta/format"] = np.array(1.0)
        out["meta/in_channels"] = np.array(float(cfg.in_channels))
        out["meta/frames"] = np.array(float(cfg.frames))
        out["meta/channels"] = np.array([float(c) for c in cfg.channels])
        out["meta/lift_channels"] = np.array(float(cfg.lift_channels))
        out["meta/head_channels"] = np.array(float(cfg.head_channels))
        out["meta/temporal_kernel"] = np.array(float(cfg.temporal_kernel))
        out["meta/fusion"] = np.array(float(_FUSION_MODES.index(cfg.fusion)))
        out["meta/categories"] = np.array(float(cfg.categories))
        out["meta/n_steps"] = np.array(float(cfg.n_steps))
        out["meta/step_seconds"] = np.array(cfg.step_seconds)
        for flag in self._META_FLAGS:
            out[f"meta/{flag}"] = np.array(1.0 if getattr(cfg, flag) else 0.0)
        for name, p in self.params.items():
            out[f"param/{name}"] = p.data
        for name, buf in self.buffers.items():
            out[f"buffer/{name}"] = buf
        return out

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            key = f"param/{name}"
            if key not in arrays:
                raise KeyError(f"checkpoint missing {key}")
            p.data = arrays[key]
        for name in self.buffers:
            key = f"buffer/{name}"
            if key not in arrays:
                raise KeyError(f"checkpoint missing {key}")
            self.buffers[name] = arrays[key].copy()

    def save(self, path: str, grid: Optional[GridSpec] = None) -> None:
        arrays = self.state_dict()
        if grid is not None:
            arrays["meta/grid"] = np.array(
                [grid.x_min, grid.x_max, grid.y_min, grid.y_max, grid.z_min, grid.z_max, grid.dx, grid.dy, grid.dz]
            )
        save_checkpoint(path, arrays)

    @classmethod
    def load(cls, path: str) -> tuple["MotionNet", Optional[GridSpec]]:
        arrays = load_checkpoint(path)
        if "meta/format" not in arrays:
            raise KeyError("checkpoint carries no model description")
        cfg = StpnConfig(
            in_channels=int(arrays["meta/in_channels"]),
            frames=int(arrays["meta/frames"]),
            channels=tuple(int(c) for c in arrays["meta/channels"]),
            lift_channels=int(arrays["meta/lift_channels"]),
            head_channels=int(arrays["meta/head_channels"]),
            temporal_kernel=int(arrays["meta/temporal_kernel"]),
            fusion=_FUSION_MODES[int(arrays["meta/fusion"])],
            categories=int(arrays["meta/categories"]),
            n_steps=int(arrays["meta/n_steps"]),
            step_seconds=float(arrays["meta/step_seconds"]),
            batch_norm=bool(arrays["meta/batch_norm"]),
            state_head=bool(arrays["meta/state_head"]),
            relative_offsets=bool(arrays["meta/relative_offsets"]),
        )
        model = cls(cfg)
        model.load_state_dict(arrays)
        grid = None
        if "meta/grid" in arrays:
            g = arrays["meta/grid"]
            grid = GridSpec(*[float(v) for v in g])
        return model, grid
