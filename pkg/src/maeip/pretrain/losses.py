"""MAEIP reconstruction losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autograd import Tensor, ops
from ..errors import MaskError, ShapeError
from .stages import PretrainStage


@dataclass
class MaeipLosses:
    """Loss tensors of one step; a loss the stage does not compute is ``None``."""

    loss_enc: Tensor | None
    loss_dec: Tensor | None
    total: Tensor


def masked_mse(pred: Tensor, clean: Tensor, mask: np.ndarray) -> Tensor:
    """Mean squared error over the masked pixels (all channels) only.

    Raises:
        MaskError: If the mask hides nothing
    """
    if pred.shape != clean.shape:
        raise ShapeError(f"prediction {pred.shape} vs clean {clean.shape}")
    m = np.broadcast_to(mask, (pred.shape[0], 1) + pred.shape[2:])
    count = float(m.sum()) * pred.shape[1]
    if count == 0:
        raise MaskError("encoder loss requested but the mask hides no pixel")
    sq = ops.mask_mul(ops.square(ops.sub(pred, clean)), m)
    return ops.scale(ops.sum(sq), 1.0 / count)


def mse(pred: Tensor, clean: Tensor) -> Tensor:
    if pred.shape != clean.shape:
        raise ShapeError(f"prediction {pred.shape} vs clean {clean.shape}")
    return ops.mean(ops.square(ops.sub(pred, clean)))


def maeip_losses(
    prediction_enc: Tensor | None,
    prediction_dec: Tensor | None,
    clean: Tensor,
    mask_map: np.ndarray,
    stage: PretrainStage,
    lambda_dec: float = 1.0,
    keep_encoder_loss: bool = True,
) -> MaeipLosses:
    """Encoder loss on masked pixels, decoder loss on all pixels.

    ``total`` is ``loss_enc`` (encoder-only), ``loss_dec`` (decoder-only) or
    ``loss_enc + lambda_dec * loss_dec`` (joint; the encoder term is dropped
    when ``keep_encoder_loss`` is off).
    """
    use_enc = stage is PretrainStage.ENCODER_ONLY or (stage is PretrainStage.JOINT and keep_encoder_loss)
    use_dec = stage is not PretrainStage.ENCODER_ONLY
    loss_enc = loss_dec = None
    if use_enc:
        if prediction_enc is None:
            raise ShapeError(f"{stage.name.lower()} stage needs an encoder prediction")
        loss_enc = masked_mse(prediction_enc, clean, mask_map)
    if use_dec:
        if prediction_dec is None:
            raise ShapeError(f"{stage.name.lower()} stage needs a decoder prediction")
        loss_dec = mse(prediction_dec, clean)

    if loss_enc is not None and loss_dec is not None:
        total = ops.add(loss_enc, ops.scale(loss_dec, lambda_dec))
    elif loss_enc is not None:
        total = loss_enc
    else:
        total = loss_dec if stage is PretrainStage.DECODER_ONLY else ops.scale(loss_dec, lambda_dec)
    return MaeipLosses(loss_enc, loss_dec, total)
