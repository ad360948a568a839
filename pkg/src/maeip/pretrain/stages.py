"""Pre-training stages, variants and the two-stage epoch schedule."""

from __future__ import annotations

import math
from enum import Enum

from ..errors import ConfigError


class PretrainStage(Enum):
    """What one pre-training step optimises."""

    ENCODER_ONLY = 0  # masked-pixel loss through the encoder head, decoder not run
    DECODER_ONLY = 1  # whole-image loss on the decoder output
    JOINT = 2  # both losses


class PretrainVariant(Enum):
    """Pre-training recipes compared by the variant benchmark."""

    NONE = 0
    ENCODER = 1
    DECODER = 2
    MAEIP = 3
    TWO_STAGE = 4


def two_stage_schedule(total_epochs: int, split: float) -> list[PretrainStage]:
    """Stage of every epoch: ``floor(split * T)`` encoder-only epochs, then joint.

    ``split = 0`` is plain one-stage joint pre-training.

    Raises:
        ConfigError: If ``split`` is outside ``[0, 1)`` or ``total_epochs < 1``
    """
    if total_epochs < 1:
        raise ConfigError(f"total_epochs must be >= 1, got {total_epochs}")
    if not 0.0 <= split < 1.0:
        raise ConfigError(f"stage split must lie in [0, 1), got {split}")
    encoder_epochs = math.floor(split * total_epochs)
    return [PretrainStage.ENCODER_ONLY] * encoder_epochs + [PretrainStage.JOINT] * (total_epochs - encoder_epochs)


def variant_schedule(variant: PretrainVariant, total_epochs: int, split: float = 0.5) -> list[PretrainStage]:
    """Epoch stages for a pre-training variant (empty for no pre-training)."""
    match variant:
        case PretrainVariant.NONE:
            return []
        case PretrainVariant.ENCODER:
            return [PretrainStage.ENCODER_ONLY] * total_epochs
        case PretrainVariant.DECODER:
            return [PretrainStage.DECODER_ONLY] * total_epochs
        case PretrainVariant.MAEIP:
            return two_stage_schedule(total_epochs, 0.0)
        case PretrainVariant.TWO_STAGE:
            return two_stage_schedule(total_epochs, split)
    raise ConfigError(f"unknown pre-training variant {variant!r}")
