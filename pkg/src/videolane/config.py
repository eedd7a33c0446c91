"""Run configuration: one flat record of every tunable, loaded from YAML.

CLI flags override file values which override the defaults below.  Unknown
keys are rejected so typos fail loudly instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from .errors import ConfigError, IoError


@dataclass(frozen=True)
class RunConfig:
    # representation
    k: int = 32                    # feature channels
    m: int = 4                     # lane basis size
    s: int = 3                     # motion search radius (working px)
    # detection
    prob_threshold: float = 0.5
    removal_halfwidth: float = 4.0
    mask_halfwidth: float = 2.0
    max_lanes: int = 6
    # supervision
    gt_width: float = 3.0
    liou_e: float = 2.0
    alpha: float = 0.25
    gamma: float = 2.0
    reg_weight: float = 1.0
    flow_weight: float = 1.0
    # optimization
    ild_epochs: int = 2
    ild_lr: float = 1e-2
    pld_epochs: int = 2
    pld_lr: float = 1e-2
    momentum: float = 0.9
    cosine_decay: bool = True
    unit_stride: int = 3           # window stride when cutting 3-frame units
    # annotation completion
    rank: int = 3
    ridge: float = 1e-3
    als_tol: float = 1e-6
    als_max_iters: int = 500
    # evaluation
    stripe_width: float = 30.0
    # run identity
    seed: int = 0
    no_warp: bool = False
    no_guidance: bool = False
    no_reuse: bool = False

    def __post_init__(self):
        def positive(name, lo=0):
            v = getattr(self, name)
            if v <= lo:
                raise ConfigError(f"{name} must be > {lo}, got {v}")

        for name in ("k", "m", "s", "max_lanes", "ild_epochs", "pld_epochs",
                     "unit_stride", "rank", "als_max_iters"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("removal_halfwidth", "mask_halfwidth", "gt_width", "liou_e",
                     "ild_lr", "pld_lr", "ridge", "als_tol"):
            positive(name)
        if not 0.0 < self.prob_threshold < 1.0:
            raise ConfigError(f"prob_threshold must be in (0,1), got {self.prob_threshold}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0,1), got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0,1), got {self.momentum}")
        if self.reg_weight < 0 or self.flow_weight < 0:
            raise ConfigError("loss weights cannot be negative")
        if self.stripe_width < 1:
            raise ConfigError(f"stripe_width must be >= 1, got {self.stripe_width}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = None


def _known_fields() -> set:
    global _FIELDS
    if _FIELDS is None:
        _FIELDS = {f.name for f in dataclasses.fields(RunConfig)}
    return _FIELDS


def config_from_dict(d: dict, base: RunConfig = None) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"config must be a mapping, got {type(d).__name__}")
    unknown = set(d) - _known_fields()
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return replace(base or RunConfig(), **d)


def load_config(path, base: RunConfig = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such config file: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_dict(raw or {}, base)
