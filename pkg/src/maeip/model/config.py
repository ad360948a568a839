"""CSformer architecture hyperparameters and named presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Any

from ..errors import ConfigError

NUM_LEVELS = 5
NUM_STAGES = 2 * NUM_LEVELS - 1
BOTTLENECK = NUM_LEVELS - 1


class AttnMode(Enum):
    """How self-attention is scoped at one depth level."""

    WINDOWED = 0
    GLOBAL = 1


class AttnKind(Enum):
    """Attention flavour of a single CSformer block."""

    W = 0  # regular windows
    SW = 1  # cyclically shifted windows
    G = 2  # all tokens


class Compose(Enum):
    """How the channel-attention and MSA branches share the attention component."""

    PARALLEL = 0
    SEQUENTIAL = 1


def _default_modes() -> tuple[AttnMode, ...]:
    return (AttnMode.WINDOWED,) * (NUM_LEVELS - 1) + (AttnMode.GLOBAL,)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of one CSformer instance.

    Stages are numbered 0..8: encoder stages 0-3 sit at levels 0-3, stage 4 is
    the bottleneck (level 4) and decoder stage ``8 - l`` sits at level ``l``.
    Level ``l`` has ``base_channels * 2**l`` channels at ``1 / 2**l`` scale.
    """

    base_channels: int = 16
    blocks_per_stage: tuple[int, ...] = (2,) * NUM_STAGES
    heads_per_stage: tuple[int, ...] = (1, 2, 4, 8, 16)
    window_size: int = 8
    gcffn_expansion: float = 2.0
    attn_mode_per_level: tuple[AttnMode, ...] = field(default_factory=_default_modes)
    in_channels: int = 3
    out_channels: int = 3
    pretrain_mode: bool = False
    attn_compose: Compose = Compose.PARALLEL
    rel_pos_bias: bool = False
    ffn_bias: bool = True
    ln_eps: float = 1e-6

    @property
    def shift_size(self) -> int:
        return self.window_size // 2

    def width(self, level: int) -> int:
        return self.base_channels * 2**level

    def hidden(self, level: int) -> int:
        return int(round(self.gcffn_expansion * self.width(level)))

    @staticmethod
    def stage_level(stage: int) -> int:
        return stage if stage <= BOTTLENECK else NUM_STAGES - 1 - stage

    def block_kind(self, stage: int, block: int) -> AttnKind:
        """W/SW alternate by block parity inside windowed stages; global levels use G."""
        if self.attn_mode_per_level[self.stage_level(stage)] is AttnMode.GLOBAL:
            return AttnKind.G
        return AttnKind.W if block % 2 == 0 else AttnKind.SW

    def validate(self) -> ModelConfig:
        """Check every field; returns ``self`` so calls can be chained.

        Raises:
            ConfigError: On the first inconsistent value
        """
        if self.base_channels < 2 or self.base_channels % 2:
            raise ConfigError(f"base_channels must be a positive even int, got {self.base_channels}")
        if len(self.blocks_per_stage) != NUM_STAGES or any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError(f"blocks_per_stage needs {NUM_STAGES} positive ints, got {self.blocks_per_stage}")
        if len(self.heads_per_stage) != NUM_LEVELS:
            raise ConfigError(f"heads_per_stage needs {NUM_LEVELS} ints, got {self.heads_per_stage}")
        for level, heads in enumerate(self.heads_per_stage):
            if heads < 1 or self.width(level) % heads:
                raise ConfigError(f"{heads} heads do not divide width {self.width(level)} at level {level}")
        if self.window_size < 2 or self.window_size % 2:
            raise ConfigError(f"window_size must be an even int >= 2, got {self.window_size}")
        if self.gcffn_expansion <= 0:
            raise ConfigError(f"gcffn_expansion must be positive, got {self.gcffn_expansion}")
        if len(self.attn_mode_per_level) != NUM_LEVELS:
            raise ConfigError(f"attn_mode_per_level needs {NUM_LEVELS} entries")
        if self.in_channels < 1 or not 1 <= self.out_channels <= self.in_channels:
            raise ConfigError(f"need 1 <= out_channels <= in_channels, got {self.out_channels}/{self.in_channels}")
        if self.ln_eps <= 0:
            raise ConfigError(f"ln_eps must be positive, got {self.ln_eps}")
        return self

    def with_updates(self, **changes: Any) -> ModelConfig:
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return replace(self, **changes).validate()

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["blocks_per_stage"] = list(self.blocks_per_stage)
        out["heads_per_stage"] = list(self.heads_per_stage)
        out["attn_mode_per_level"] = [m.name.lower() for m in self.attn_mode_per_level]
        out["attn_compose"] = self.attn_compose.name.lower()
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelConfig:
        """Build from JSON-style values; unknown keys are rejected."""
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(data)
        try:
            for key in ("blocks_per_stage", "heads_per_stage"):
                if key in kwargs:
                    kwargs[key] = tuple(int(v) for v in kwargs[key])
            if "attn_mode_per_level" in kwargs:
                kwargs["attn_mode_per_level"] = tuple(AttnMode[str(m).upper()] for m in kwargs["attn_mode_per_level"])
            if "attn_compose" in kwargs:
                kwargs["attn_compose"] = Compose[str(kwargs["attn_compose"]).upper()]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed model config value: {exc}") from exc
        return cls(**kwargs).validate()


PRESETS: dict[str, ModelConfig] = {
    "csformer-nano": ModelConfig(base_channels=8, blocks_per_stage=(1,) * NUM_STAGES),
    "csformer-toy": ModelConfig(base_channels=16, blocks_per_stage=(2,) * NUM_STAGES),
}
PRESETS["nano"] = PRESETS["csformer-nano"]
PRESETS["toy"] = PRESETS["csformer-toy"]


def get_preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
