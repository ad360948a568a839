"""Finite-difference gradient suite over the op library and a whole model."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .autograd import GradCheckReport, Tensor, grad_check, grad_check_params, ops
from .inference.padding import plan_padding
from .model.config import ModelConfig, get_preset
from .model.csformer import model_forward
from .model.params import cast_params, init_params
from .train.losses import charbonnier

logger = logging.getLogger(__name__)

F64 = np.float64
TOLERANCE = 1e-4

# builder(rng) -> (function, point)
Case = Callable[[np.random.Generator], tuple[Callable[[Tensor], Tensor], Tensor]]


def _rand(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), dtype=F64)


def _elementwise(rng: np.random.Generator):
    b, c = _rand(rng, 2, 3, 4, 4), _rand(rng, 1, 3, 1, 1)
    return (lambda x: ops.sub(ops.mul(ops.add(x, b), c), ops.scale(x, 0.5))), _rand(rng, 2, 3, 4, 4)


def _gate(rng: np.random.Generator):
    s = _rand(rng, 2, 4, 1, 1)
    return (lambda x: ops.gate_mul(ops.square(x), s)), _rand(rng, 2, 4, 3, 3)


def _sqrt_mean(rng: np.random.Generator):
    x = Tensor(np.abs(rng.standard_normal((3, 5))) + 0.5, dtype=F64)
    return (lambda t: ops.mean(ops.sqrt(t))), x


def _matmul(rng: np.random.Generator):
    b = _rand(rng, 2, 5, 3)
    return (lambda x: ops.matmul(x, b)), _rand(rng, 2, 4, 5)


def _linear(rng: np.random.Generator):
    w, bias = _rand(rng, 6, 4), _rand(rng, 4)
    return (lambda x: ops.linear(x, w, bias)), _rand(rng, 2, 3, 6)


def _linear_weight(rng: np.random.Generator):
    x, bias = _rand(rng, 2, 3, 6), _rand(rng, 4)
    return (lambda w: ops.linear(x, w, bias)), _rand(rng, 6, 4)


def _conv3x3(rng: np.random.Generator):
    w, bias = _rand(rng, 4, 3, 3, 3), _rand(rng, 4)
    return (lambda x: ops.conv2d(x, w, bias, pad=1)), _rand(rng, 1, 3, 6, 5)


def _conv_weight(rng: np.random.Generator):
    x = _rand(rng, 2, 2, 5, 5)
    return (lambda w: ops.conv2d(x, w, stride=2, pad=1)), _rand(rng, 3, 2, 3, 3)


def _depthwise(rng: np.random.Generator):
    w = _rand(rng, 4, 1, 3, 3)
    return (lambda x: ops.conv2d(x, w, pad=1, groups=4)), _rand(rng, 1, 4, 5, 5)


def _depthwise_weight(rng: np.random.Generator):
    x = _rand(rng, 2, 3, 6, 5)
    return (lambda w: ops.conv2d(x, w, stride=2, pad=1, groups=3)), _rand(rng, 3, 1, 3, 3)


def _pointwise(rng: np.random.Generator):
    w, bias = _rand(rng, 5, 3, 1, 1), _rand(rng, 5)
    return (lambda x: ops.conv2d(x, w, bias)), _rand(rng, 2, 3, 4, 3)


def _pointwise_weight(rng: np.random.Generator):
    x = _rand(rng, 2, 3, 4, 3)
    return (lambda w: ops.conv2d(x, w)), _rand(rng, 5, 3, 1, 1)


def _grouped(rng: np.random.Generator):
    w = _rand(rng, 6, 2, 3, 3)
    return (lambda x: ops.conv2d(x, w, pad=1, groups=2)), _rand(rng, 1, 4, 5, 4)


def _layernorm(rng: np.random.Generator):
    gamma, beta = _rand(rng, 5), _rand(rng, 5)
    return (lambda x: ops.layernorm(x, gamma, beta)), _rand(rng, 2, 5, 3, 3)


def _gelu(rng: np.random.Generator):
    return ops.gelu, _rand(rng, 3, 7)


def _softmax(rng: np.random.Generator):
    mask = np.where(rng.random((1, 4, 6)) < 0.3, -np.inf, 0.0)
    mask[..., 0] = 0.0
    return (lambda x: ops.masked_softmax(x, mask)), _rand(rng, 2, 4, 6)


def _pool(rng: np.random.Generator):
    valid = np.zeros((1, 1, 5, 6))
    valid[..., :3, :4] = 1.0
    return (lambda x: ops.global_avg_pool(x, valid)), _rand(rng, 2, 3, 5, 6)


def _rearrange(rng: np.random.Generator):
    def f(x: Tensor) -> Tensor:
        y = ops.pixel_unshuffle(ops.pad2d(x, 1, 0), 2)
        y = ops.crop2d(ops.pixel_shuffle(ops.mul(y, y), 2), 3, 4)
        y = ops.roll(y, (1, -1), (2, 3))
        flipped = ops.reshape(ops.transpose(y, (0, 1, 3, 2)), (1, 2, 3, 4))
        return ops.slice_axis(ops.concat([y, flipped], axis=1), 1, 3, axis=1)

    return f, _rand(rng, 1, 2, 3, 4)


def _take_rows(rng: np.random.Generator):
    index = rng.integers(0, 5, size=(3, 4))
    return (lambda t: ops.take_rows(t, index)), _rand(rng, 5, 2)


def _charbonnier(rng: np.random.Generator):
    target = _rand(rng, 1, 3, 4, 4)
    return (lambda x: charbonnier(x, target)), _rand(rng, 1, 3, 4, 4)


OP_CASES: dict[str, Case] = {
    "elementwise": _elementwise,
    "gate_mul": _gate,
    "sqrt+mean": _sqrt_mean,
    "matmul": _matmul,
    "linear": _linear,
    "linear.weight": _linear_weight,
    "conv2d": _conv3x3,
    "conv2d.weight": _conv_weight,
    "conv2d.depthwise": _depthwise,
    "conv2d.depthwise.weight": _depthwise_weight,
    "conv2d.pointwise": _pointwise,
    "conv2d.pointwise.weight": _pointwise_weight,
    "conv2d.grouped": _grouped,
    "layernorm": _layernorm,
    "gelu": _gelu,
    "masked_softmax": _softmax,
    "global_avg_pool": _pool,
    "rearrange": _rearrange,
    "take_rows": _take_rows,
    "charbonnier": _charbonnier,
}


@dataclass
class SuiteRow:
    name: str
    max_rel_err: float
    passed: bool
    inputs: int
    seconds: float


def _model_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    params = cast_params(init_params(config, seed), F64)
    rng = np.random.default_rng([seed, 3])
    # A zero output conv would make every parameter gradient vanish.
    for name in ("output.weight", "output.bias"):
        params[name] = Tensor(0.1 * rng.standard_normal(params[name].shape), requires_grad=True, name=name)
    return params


def check_model(
    config: ModelConfig, seed: int, size: tuple[int, int] = (12, 12), coords: int = 16, names: int = 12
) -> GradCheckReport:
    """Input and parameter gradients of the full model on one random image.

    A non-multiple size runs through the padded path, so the masks are
    covered as well.
    """
    rng = np.random.default_rng(seed)
    params = _model_params(config, seed)
    plan = plan_padding(*size, config)
    target = _rand(rng, 1, config.out_channels, *size)
    x = _rand(rng, 1, config.in_channels, *size)

    def loss(p: dict[str, Tensor], image: Tensor) -> Tensor:
        return charbonnier(model_forward(image, p, config, plan).restored, target)

    by_input = grad_check(lambda t: loss(params, t), x, eps=1e-6, max_coords=coords, rng=rng)
    chosen = sorted(rng.choice(sorted(params), size=min(names, len(params)), replace=False))
    by_param = grad_check_params(lambda p: loss(p, x), params, chosen, eps=1e-6, rng=rng)
    worst = max((by_input, by_param), key=lambda r: r.max_rel_err)
    return GradCheckReport(
        worst.max_rel_err,
        by_input.passed and by_param.passed,
        by_input.checked + by_param.checked,
        worst.worst,
        by_param.per_name,
    )


def run_gradient_suite(
    config: ModelConfig | str = "csformer-nano", inputs: int = 5, seed: int = 0, tol: float = TOLERANCE
) -> list[SuiteRow]:
    """Check every op case and the model on ``inputs`` random points each, at 64-bit."""
    label = config if isinstance(config, str) else "custom"
    config = get_preset(config) if isinstance(config, str) else config
    rows = []
    for name, case in OP_CASES.items():
        start, worst = time.perf_counter(), 0.0
        for i in range(inputs):
            rng = np.random.default_rng([seed, i])
            f, x = case(rng)
            worst = max(worst, grad_check(f, x, eps=1e-6, tol=tol, rng=rng).max_rel_err)
        rows.append(SuiteRow(name, worst, worst <= tol, inputs, time.perf_counter() - start))
        logger.debug("%s: max rel err %.2e", name, worst)

    start, worst = time.perf_counter(), 0.0
    for i in range(inputs):
        worst = max(worst, check_model(config, seed + i).max_rel_err)
    rows.append(SuiteRow(f"model:{label}", worst, worst <= tol, inputs, time.perf_counter() - start))
    return rows
