"""Run configuration with a flat key/value JSON form."""
from dataclasses import asdict, dataclass, field, fields

from .errors import InvalidArgumentError
from .losses import LossWeights
from .network import Architecture


@dataclass
class CorrectionConfig:
    hc_iterations: int = 4
    opt_steps: int = 100
    learning_rate: float = 0.005
    weight_decay: float = 1e-4
    decoupled_weight_decay: bool = False
    downsample_factor: tuple = (8, 8, 8)
    seed: int = 0
    deterministic: bool = True
    channels: int = 8
    blocks: int = 7
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        f = self.downsample_factor
        self.downsample_factor = (int(f),) * 3 if isinstance(f, (int, float)) else tuple(int(v) for v in f)
        if len(self.downsample_factor) != 3 or min(self.downsample_factor) < 1:
            raise InvalidArgumentError(f"downsample_factor must be >= 1 per axis, got {f}")
        if self.hc_iterations < 1:
            raise InvalidArgumentError("hc_iterations must be >= 1")
        if self.opt_steps < 1:
            raise InvalidArgumentError("opt_steps must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise InvalidArgumentError("learning_rate and weight_decay must be >= 0")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.architecture  # validates channels/blocks

    @property
    def architecture(self):
        return Architecture(self.channels, self.blocks)

    def to_flat(self):
        out = {k: v for k, v in asdict(self).items() if k != "weights"}
        out["downsample_factor"] = list(self.downsample_factor)
        out.update(asdict(self.weights))
        return out

    @classmethod
    def from_flat(cls, values):
        own = {f.name for f in fields(cls)} - {"weights"}
        loss_keys = {f.name for f in fields(LossWeights)}
        unknown = set(values) - own - loss_keys
        if unknown:
            raise InvalidArgumentError(f"unknown config key(s): {sorted(unknown)}")
        try:
            weights = LossWeights(**{k: v for k, v in values.items() if k in loss_keys})
            return cls(weights=weights, **{k: v for k, v in values.items() if k in own})
        except TypeError as exc:
            raise InvalidArgumentError(str(exc)) from exc
