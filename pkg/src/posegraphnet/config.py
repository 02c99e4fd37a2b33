"""Model and run configuration, serialized as JSON with unknown keys rejected."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError

ADJACENCY_MODES = ("static", "adaptive")
KERNEL_MODES = ("split", "basic")
LOSS_MODES = ("idev", "ploss", "position_only", "orientation_only")
PLOSS_MODES = ("joint", "bone_vector")


def _from_dict(cls, raw: dict, what: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{what} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {', '.join(unknown)}")
    return raw


@dataclass
class ModelConfig:
    channels: int = 256
    blocks: int = 3
    ne_modules_per_block: int = 2
    dropout: float = 0.2
    squeeze_ratio: int = 8
    node_only: bool = False
    adjacency_v: str = "adaptive"
    adjacency_e: str = "adaptive"
    kernels: str = "split"
    loss: str = "idev"
    lambda_angle: float = 20.0
    ploss_mode: str = "joint"
    # millimeters per network output unit
    position_scale: float = 100.0
    # std of the Gaussian added to adaptive adjacency at init
    adaptive_init_noise: float = 1e-4
    seed: int = 0

    def validate(self) -> "ModelConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)
        for name in ("channels", "blocks", "ne_modules_per_block", "squeeze_ratio", "seed"):
            need(isinstance(getattr(self, name), int) and not isinstance(getattr(self, name), bool),
                 f"{name} must be an integer")
        need(self.channels > 0, "channels must be positive")
        need(self.blocks >= 0, "blocks must be non-negative")
        need(self.ne_modules_per_block > 0, "ne_modules_per_block must be positive")
        need(self.squeeze_ratio > 0 and self.channels % self.squeeze_ratio == 0,
             "squeeze_ratio must divide channels")
        need(0.0 <= self.dropout < 1.0, "dropout must be in [0, 1)")
        need(isinstance(self.node_only, bool), "node_only must be a boolean")
        need(self.adjacency_v in ADJACENCY_MODES, f"adjacency_v must be one of {ADJACENCY_MODES}")
        need(self.adjacency_e in ADJACENCY_MODES, f"adjacency_e must be one of {ADJACENCY_MODES}")
        need(self.kernels in KERNEL_MODES, f"kernels must be one of {KERNEL_MODES}")
        need(self.loss in LOSS_MODES, f"loss must be one of {LOSS_MODES}")
        need(self.ploss_mode in PLOSS_MODES, f"ploss_mode must be one of {PLOSS_MODES}")
        need(self.lambda_angle >= 0, "lambda_angle must be non-negative")
        need(self.position_scale > 0, "position_scale must be positive")
        need(self.adaptive_init_noise >= 0, "adaptive_init_noise must be non-negative")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        return cls(**_from_dict(cls, raw, "model config")).validate()


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 20
    batch_size: int = 256
    lr: float = 1e-4
    lr_decay: float = 0.92
    lr_decay_every: int = 5
    train_path: Optional[str] = None
    val_path: Optional[str] = None
    checkpoint_out: Optional[str] = None
    seed: int = 0

    def validate(self) -> "RunConfig":
        self.model.validate()
        if not isinstance(self.epochs, int) or self.epochs <= 0:
            raise ConfigError("epochs must be a positive integer")
        if not isinstance(self.batch_size, int) or self.batch_size <= 0:
            raise ConfigError("batch_size must be a positive integer")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")
        if not isinstance(self.lr_decay_every, int) or self.lr_decay_every <= 0:
            raise ConfigError("lr_decay_every must be a positive integer")
        return self

    def lr_at(self, epoch: int) -> float:
        """Step decay: epochs [0, every) run at the base rate."""
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(_from_dict(cls, raw, "run config"))
        model = ModelConfig.from_dict(raw.pop("model", {}))
        try:
            return cls(model=model, **raw).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)
