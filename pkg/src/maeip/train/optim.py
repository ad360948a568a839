"""AdamW with decoupled weight decay and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from ..autograd import Tensor
from ..errors import ConfigError, TapeError


@dataclass
class OptimState:
    """AdamW moments and hyperparameters.

    ``steps`` counts the updates each parameter has received, so parameters
    that join training late (for example decoder weights after an encoder-only
    stage) get their own bias correction.
    """

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)
    step: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0

    def to_arrays(self) -> dict[str, np.ndarray]:
        """Flatten into checkpoint entries (``m.*``, ``v.*``, ``t.*``, ``step``)."""
        out: dict[str, np.ndarray] = {"step": np.asarray(self.step, dtype=np.int64)}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
            out[f"t.{name}"] = np.asarray(self.steps[name], dtype=np.int64)
        return out

    @classmethod
    def from_arrays(
        cls,
        arrays: Mapping[str, np.ndarray],
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> OptimState:
        state = cls(betas=betas, eps=eps, weight_decay=weight_decay)
        state.step = int(arrays.get("step", 0))
        for key, value in arrays.items():
            kind, _, name = key.partition(".")
            if kind == "m":
                state.m[name] = np.array(value)
            elif kind == "v":
                state.v[name] = np.array(value)
            elif kind == "t":
                state.steps[name] = int(value)
        return state


def collect_grads(params: Mapping[str, Tensor], require_all: bool = False) -> dict[str, np.ndarray]:
    """Gradients populated by the last backward pass, by name.

    Raises:
        TapeError: If nothing has a gradient, or ``require_all`` and any is missing
    """
    grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    if not grads:
        raise TapeError("no parameter has a gradient; run backward first")
    if require_all and len(grads) != len(params):
        missing = sorted(set(params) - set(grads))
        raise TapeError(f"{len(missing)} parameters have no gradient, first {missing[0]!r}")
    return grads


def adamw_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: OptimState,
    lr: float,
) -> tuple[dict[str, Tensor], OptimState]:
    """One AdamW update.

    Parameters without an entry in ``grads`` are carried over unchanged.
    Returns new leaf tensors and the updated state; inputs are not modified.
    """
    b1, b2 = state.betas
    new_state = OptimState(
        dict(state.m), dict(state.v), dict(state.steps), state.step + 1, state.betas, state.eps, state.weight_decay
    )
    out: dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if g.shape != p.shape:
            raise TapeError(f"{name}: gradient {g.shape} does not match parameter {p.shape}")
        t = new_state.steps.get(name, 0) + 1
        m = b1 * new_state.m.get(name, np.zeros_like(p.data)) + (1.0 - b1) * g
        v = b2 * new_state.v.get(name, np.zeros_like(p.data)) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        data = p.data * (1.0 - lr * state.weight_decay)
        data = data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_state.m[name], new_state.v[name], new_state.steps[name] = m.astype(p.dtype), v.astype(p.dtype), t
        out[name] = Tensor(data.astype(p.dtype), requires_grad=True, name=name)
    return out, new_state


@dataclass(frozen=True)
class Schedule:
    """Cosine annealing from ``lr_init`` to ``lr_min`` over ``total_steps``."""

    lr_init: float = 2e-4
    lr_min: float = 1e-6
    total_steps: int = 1000

    def validate(self) -> Schedule:
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.lr_min <= self.lr_init:
            raise ConfigError(f"need 0 <= lr_min <= lr_init, got {self.lr_min} / {self.lr_init}")
        return self


def cosine_lr(step: int, schedule: Schedule) -> float:
    """``lr_min + 0.5 (lr_init - lr_min)(1 + cos(pi step / total))``.

    Raises:
        ConfigError: If ``step`` is outside ``[0, total_steps]``
    """
    if not 0 <= step <= schedule.total_steps:
        raise ConfigError(f"step {step} outside [0, {schedule.total_steps}]")
    if step == 0:
        return schedule.lr_init
    if step == schedule.total_steps:
        return schedule.lr_min
    cos = math.cos(math.pi * step / schedule.total_steps)
    return schedule.lr_min + 0.5 * (schedule.lr_init - schedule.lr_min) * (1.0 + cos)
