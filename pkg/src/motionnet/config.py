"""Flat key=value configuration covering every tunable in the package.

One text file drives data generation, model shape, loss weighting, training
and inference. Keys are dotted (section.field), values are scalars or
comma-separated sequences, '#' starts a comment. Unknown keys are rejected
so ablation matrices cannot silently typo a toggle, and serialization is a
fixed point under re-parsing.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .bev import GridSpec
from .losses import LossWeights
from .model import StpnConfig
from .sim import ScenarioConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataParams:
    """Clip-set generation: how many scenes, sampled as clip pairs or singles."""

    n_clips: int = 8
    n_eval: int = 4
    # the reference objective includes the temporal terms, which need pairs
    paired: bool = True
    pair_offset: float = 0.05
    spacing: float = 0.2
    seed: int = 0


@dataclass
class TrainParams:
    epochs: int = 10
    batch_size: int = 2
    lr: float = 1e-3
    mgda: bool = False
    compensate: str = "gt"
    seed: int = 0
    auto_weights: bool = True
    val_fraction: float = 0.25


@dataclass
class InferParams:
    theta_static: float = 0.5
    suppress: bool = True
    all_steps: bool = False


_SECTION_DOCS = {
    "grid": "cell grid (meters; height slices become input channels)",
    "model": "network shape and temporal fusion",
    "scenario": "synthetic scene generation",
    "loss": "objective weighting",
    "data": "clip-set generation",
    "train": "optimization",
    "infer": "inference and evaluation thresholds",
}

_SECTIONS = {
    "grid": GridSpec,
    "model": StpnConfig,
    "scenario": ScenarioConfig,
    "loss": LossWeights,
    "data": DataParams,
    "train": TrainParams,
    "infer": InferParams,
}


@dataclass
class Config:
    grid: GridSpec = field(default_factory=GridSpec)
    model: StpnConfig = field(default_factory=StpnConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    data: DataParams = field(default_factory=DataParams)
    train: TrainParams = field(default_factory=TrainParams)
    infer: InferParams = field(default_factory=InferParams)


def default_config() -> Config:
    return Config()


def known_keys() -> list[str]:
    out = []
    for section, cls in _SECTIONS.items():
        out += [f"{section}.{f.name}" for f in fields(cls)]
    return out


def _parse_value(key: str, raw: str, default, line: int):
    def fail(why):
        raise ConfigError(f"line {line}: {key}: {why}")

    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        fail(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            fail(f"expected an integer, got {raw!r}")
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            fail(f"expected a number, got {raw!r}")
    if isinstance(default, str):
        if not raw:
            fail("expected a value")
        return raw
    if isinstance(default, tuple):
        elem = int if all(isinstance(v, int) for v in default) else float
        try:
            return tuple(elem(p) for p in raw.split(","))
        except ValueError:
            fail(f"expected comma-separated {elem.__name__}s, got {raw!r}")
    if isinstance(default, np.ndarray):
        try:
            return np.array([float(p) for p in raw.split(",")])
        except ValueError:
            fail(f"expected comma-separated numbers, got {raw!r}")
    fail(f"unsupported value type {type(default).__name__}")


def _format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, str):
        return value
    if isinstance(value, (tuple, list, np.ndarray)):
        return ", ".join(_format_value(v) for v in value)
    raise ConfigError(f"cannot serialize {type(value).__name__}")


def _defaults_map() -> dict:
    out = {}
    for section, cls in _SECTIONS.items():
        inst = cls()
        for f in fields(cls):
            out[f"{section}.{f.name}"] = getattr(inst, f.name)
    return out


def parse_overrides(pairs: dict, base: Optional[Config] = None) -> Config:
    """Apply raw string overrides (dotted key -> value text) onto a config."""
    base = base or Config()
    defaults = _defaults_map()
    values = {}
    for i, (key, raw) in enumerate(pairs.items(), start=1):
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r}")
        section, name = key.split(".", 1)
        values.setdefault(section, {})[name] = _parse_value(key, raw, defaults[key], i)
    return _build(base, values)


def _build(base: Config, values: dict) -> Config:
    parts = {}
    for section, cls in _SECTIONS.items():
        overrides = values.get(section, {})
        current = getattr(base, section)
        if overrides:
            try:
                parts[section] = replace(current, **overrides)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"section {section!r}: {e}") from e
        else:
            parts[section] = current
    return Config(**parts)


def parse_config(text: str, base: Optional[Config] = None) -> Config:
    """Parse key=value lines onto ``base`` (package defaults unless given).
    Unknown and duplicate keys are errors, with line numbers."""
    defaults = _defaults_map()
    values: dict = {}
    seen: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value, got {body!r}")
        key, raw = (p.strip() for p in body.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first on line {seen[key]})")
        seen[key] = lineno
        section, name = key.split(".", 1)
        values.setdefault(section, {})[name] = _parse_value(key, raw, defaults[key], lineno)
    return _build(base or Config(), values)


def read_config(path: str, base: Optional[Config] = None) -> Config:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror or e}") from e
    try:
        return parse_config(text, base)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


def serialize_config(cfg: Config) -> str:
    lines = []
    for section, cls in _SECTIONS.items():
        lines.append(f"# {_SECTION_DOCS[section]}")
        inst = getattr(cfg, section)
        for f in fields(cls):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(inst, f.name))}")
        lines.append("")
    return "\n".join(lines)


def validate_config(cfg: Config) -> None:
    """Cross-section consistency that individual dataclasses cannot see."""
    if cfg.model.in_channels != cfg.grid.n_z:
        raise ConfigError(
            f"model.in_channels = {cfg.model.in_channels} but the grid has "
            f"{cfg.grid.n_z} height slices; they must match"
        )
    if cfg.grid.h % 8 or cfg.grid.w % 8:
        raise ConfigError(
            f"grid is {cfg.grid.h}x{cfg.grid.w} cells; both sides must be "
            "divisible by 8 for the three downsampling levels"
        )
    if not 0.0 <= cfg.train.val_fraction < 1.0:
        raise ConfigError(f"train.val_fraction = {cfg.train.val_fraction} not in [0, 1)")
    if (cfg.loss.beta > 0 or cfg.loss.gamma > 0) and not cfg.data.paired:
        raise ConfigError(
            "loss.beta/loss.gamma need paired clips; set data.paired = true "
            "or zero the temporal weights"
        )
