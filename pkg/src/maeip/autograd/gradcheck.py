"""Central finite-difference gradient checking."""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference comparison.

    ``worst`` names the coordinate with the largest relative error, as
    ``(label, flat_index, analytic, numeric)``.
    """

    max_rel_err: float
    passed: bool
    checked: int
    worst: tuple[str, int, float, float] | None = None
    per_name: dict[str, float] = field(default_factory=dict)


def _rel_err(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def _scalarize(out: Tensor, direction: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return ops.reshape(out, ())
    return ops.sum(ops.mul(out, Tensor(direction)))


def _pick(size: int, max_coords: int | None, rng: np.random.Generator) -> np.ndarray:
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_coords, replace=False))


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = 64,
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare the tape gradient of ``f`` at ``x`` with central differences.

    Non-scalar outputs are reduced against a fixed random tensor, so the check
    covers a random direction of the Jacobian. Failures are reported, never
    raised.

    Args:
        f: Deterministic tensor function
        x: Point of evaluation (its data is not modified)
        eps: Finite-difference step
        tol: Relative-error threshold for ``passed``
        max_coords: Check a random subset of coordinates for large inputs
        rng: Source for the direction and the coordinate subset
        floor: Denominator floor for near-zero gradients

    Returns:
        GradCheckReport
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    base = np.array(x.data, copy=True)

    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    direction = rng.standard_normal(out.shape).astype(out.dtype) if out.size != 1 else None
    loss = _scalarize(out, direction)
    if loss.node is not None or loss.requires_grad:
        backward(loss)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    def evaluate(values: np.ndarray) -> float:
        with no_grad():
            return _scalarize(f(Tensor(values)), direction).item()

    flat = base.reshape(-1)
    worst: tuple[str, int, float, float] | None = None
    max_err = 0.0
    coords = _pick(flat.size, max_coords, rng)
    for i in coords:
        plus, minus = flat.copy(), flat.copy()
        plus[i] += eps
        minus[i] -= eps
        numeric = (evaluate(plus.reshape(base.shape)) - evaluate(minus.reshape(base.shape))) / (2.0 * eps)
        a = float(analytic.reshape(-1)[i])
        err = _rel_err(a, numeric, floor)
        if worst is None or err > max_err:
            max_err, worst = err, ("x", int(i), a, numeric)

    report = GradCheckReport(max_err, max_err <= tol, len(coords), worst)
    logger.debug("grad_check: %d coords, max rel err %.3e", report.checked, report.max_rel_err)
    return report


def grad_check_params(
    loss_fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    names: Sequence[str],
    coords_per_param: int = 1,
    eps: float = 1e-5,
    tol: float = 1e-4,
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Finite-difference check of a scalar loss against selected named parameters.

    ``params`` is left unchanged; perturbations are applied to copies.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    leaves = {k: Tensor(np.array(v.data, copy=True), requires_grad=True, name=k) for k, v in params.items()}
    backward(loss_fn(leaves))

    def evaluate(name: str, values: np.ndarray) -> float:
        trial = dict(leaves)
        trial[name] = Tensor(values, name=name)
        with no_grad():
            return loss_fn(trial).item()

    max_err = 0.0
    worst: tuple[str, int, float, float] | None = None
    per_name: dict[str, float] = {}
    checked = 0
    for name in names:
        base = leaves[name].data
        grad = leaves[name].grad
        grad = np.zeros_like(base) if grad is None else grad
        flat = base.reshape(-1)
        for i in _pick(flat.size, coords_per_param, rng):
            plus, minus = flat.copy(), flat.copy()
            plus[i] += eps
            minus[i] -= eps
            numeric = (evaluate(name, plus.reshape(base.shape)) - evaluate(name, minus.reshape(base.shape))) / (
                2.0 * eps
            )
            a = float(grad.reshape(-1)[i])
            err = _rel_err(a, numeric, floor)
            per_name[name] = max(per_name.get(name, 0.0), err)
            checked += 1
            if worst is None or err > max_err:
                max_err, worst = err, (name, int(i), a, numeric)

    return GradCheckReport(max_err, max_err <= tol, checked, worst, per_name)
