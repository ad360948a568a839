"""Dense tensors with a reverse-mode tape and the ops CSformer needs."""

from . import ops
from .counting import MacCounter, counting_macs, mac_scope
from .gradcheck import GradCheckReport, grad_check, grad_check_params
from .tensor import DEFAULT_DTYPE, Tape, Tensor, backward, grad_enabled, no_grad, zero_grad

__all__ = [
    "DEFAULT_DTYPE",
    "GradCheckReport",
    "MacCounter",
    "Tape",
    "Tensor",
    "backward",
    "counting_macs",
    "grad_check",
    "grad_check_params",
    "grad_enabled",
    "mac_scope",
    "no_grad",
    "ops",
    "zero_grad",
]
