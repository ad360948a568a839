"""Differentiable operations CSformer needs, on top of numpy kernels.

Every op validates its preconditions, computes the forward value and returns a
Tensor whose tape node carries the vector-Jacobian product. Broadcasting is
limited to a python scalar, a per-channel ``[N|1, C, 1, 1]`` operand and a
leading batch dimension of 1; anything else is rejected.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ..errors import ShapeError
from .counting import tally
from .tensor import Tensor, make_result

ELEMENTWISE_OPS = ("add", "sub", "mul", "scale", "gate_mul")

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _broadcast_kind(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> str | None:
    # a 1x1 map against a per-channel vector counts as channel, not same
    if len(a_shape) == len(b_shape) == 4:
        n, c, _, _ = a_shape
        if b_shape[1] == c and b_shape[2:] == (1, 1) and b_shape[0] in (1, n):
            return "channel"
    if a_shape == b_shape:
        return "same"
    if b_shape == () or b_shape == (1,):
        return "scalar"
    if len(a_shape) == len(b_shape) and b_shape[0] == 1 and b_shape[1:] == a_shape[1:]:
        return "batch"
    return None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) < g.ndim:
        return np.asarray(g.sum()).reshape(shape)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


def elementwise(op: str, a: Tensor, b: Tensor | float) -> Tensor:
    """Pointwise binary op.

    Args:
        op: One of add, sub, mul, scale (python scalar) or gate_mul
            (per-channel ``[N|1, C, 1, 1]`` product)
        a: Left operand, defines the result shape
        b: Right operand (tensor or python scalar)

    Returns:
        Tensor with ``a.shape``

    Raises:
        ShapeError: If ``b`` is not covered by the broadcast rules
    """
    if op not in ELEMENTWISE_OPS:
        raise ValueError(f"unknown elementwise op {op!r}")

    if not isinstance(b, Tensor):
        if op == "gate_mul":
            raise ShapeError("gate_mul needs a per-channel tensor operand")
        s = float(b)
        if op == "add":
            return make_result(a.data + s, (a,), lambda g: (g,), "add")
        if op == "sub":
            return make_result(a.data - s, (a,), lambda g: (g,), "sub")
        return make_result(a.data * s, (a,), lambda g: (g * s,), op)

    if op == "scale":
        raise ShapeError("scale takes a python scalar, not a tensor")
    kind = _broadcast_kind(a.shape, b.shape)
    if kind is None:
        raise ShapeError(f"{op}: cannot broadcast {b.shape} onto {a.shape}")
    if op == "gate_mul" and kind != "channel":
        raise ShapeError(f"gate_mul needs a [N|1, C, 1, 1] operand, got {b.shape} for {a.shape}")

    ad, bd, b_shape = a.data, b.data, b.shape
    if op == "add":
        return make_result(ad + bd, (a, b), lambda g: (g, _unbroadcast(g, b_shape)), "add")
    if op == "sub":
        return make_result(ad - bd, (a, b), lambda g: (g, -_unbroadcast(g, b_shape)), "sub")

    def mul_backward(g: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        ga = g * bd if a.requires_grad else None
        gb = _unbroadcast(g * ad, b_shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad * bd, (a, b), mul_backward, op)


def add(a: Tensor, b: Tensor | float) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Tensor | float) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Tensor | float) -> Tensor:
    return elementwise("mul", a, b)


def scale(a: Tensor, s: float) -> Tensor:
    return elementwise("scale", a, s)


def gate_mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("gate_mul", a, b)


def mask_mul(x: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant 0/1 map broadcastable to ``x`` (no gradient to the map)."""
    const = np.broadcast_to(mask.astype(x.dtype, copy=False), x.shape)
    return elementwise("mul", x, Tensor(const))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(xd * xd, (x,), lambda g: (2.0 * xd * g,), "square")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return make_result(
        np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
    )


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return make_result(
        np.asarray(x.data.mean(), dtype=x.dtype), (x,), lambda g: (np.full(shape, g / n, dtype=g.dtype),), "mean"
    )


# --- linear algebra ---


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` may be 2-D (shared across ``a``'s leading axes) or carry the same
    leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}")

    ad, bd = a.data, b.data
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    tally(int(np.prod(a.shape[:-2], dtype=np.int64)) * m * k * n)

    def backward(g: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if shared:
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return make_result(ad @ bd, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Token projection ``x[..., K] @ w[K, N] + b[N]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    k, n = w.shape
    xd, wd = x.data, w.data
    tally(int(np.prod(x.shape[:-1], dtype=np.int64)) * k * n)
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def backward(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        g2 = g.reshape(-1, n)
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.reshape(-1, k).T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward, "linear")


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    Args:
        x: Input ``[N, Cin, H, W]``
        w: Kernel ``[Cout, Cin/groups, kh, kw]``
        bias: Optional ``[Cout]``
        stride: Spatial stride
        pad: Zero padding on every side
        groups: Channel groups (``groups == Cin`` gives a depth-wise conv)

    Returns:
        ``[N, Cout, Hout, Wout]`` with standard conv arithmetic

    Raises:
        ShapeError: On channel/group mismatch or an empty output
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d needs 4-D input and kernel, got {x.shape} and {w.shape}")
    n, cin, h, wid = x.shape
    cout, cpg, kh, kw = w.shape
    if cin % groups or cout % groups or cpg != cin // groups:
        raise ShapeError(f"conv2d: {cin} input channels, kernel {w.shape}, groups={groups}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} for {cout} output channels")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wid + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{wid}")

    tally(n * cout * cpg * kh * kw * ho * wo)
    wd = w.data
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data

    if kh == kw == 1 and stride == 1 and groups == 1 and pad == 0:
        w2 = wd.reshape(cout, cin)
        out = (w2 @ xp.reshape(n, cin, -1)).reshape(n, cout, ho, wo)
        if bias is not None:
            out = out + bias.data.reshape(1, cout, 1, 1)

        def pointwise_backward(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
            g3 = g.reshape(n, cout, -1)
            gx = gw = None
            if x.requires_grad:
                gx = (w2.T @ g3).reshape(n, cin, h, wid)
            if w.requires_grad:
                gw = np.matmul(g3, xp.reshape(n, cin, -1).transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
            if bias is None:
                return gx, gw
            return gx, gw, g.sum(axis=(0, 2, 3))

        parents = (x, w) if bias is None else (x, w, bias)
        return make_result(out, parents, pointwise_backward, "conv2d")

    if groups == cin == cout:
        return _depthwise_conv(x, w, bias, xp, stride, pad, ho, wo)
    if groups == 1:
        return _im2col_conv(x, w, bias, xp, stride, pad, ho, wo)

    cog = cout // groups
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = cols.reshape(n, groups, cpg, ho, wo, kh, kw)
    wg = wd.reshape(groups, cog, cpg, kh, kw)
    out = np.einsum("ngcyxij,gocij->ngoyx", cols, wg, optimize=True).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def backward(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        g5 = g.reshape(n, groups, cog, ho, wo)
        gx = gw = None
        if w.requires_grad:
            gw = np.einsum("ngoyx,ngcyxij->gocij", g5, cols, optimize=True).reshape(wd.shape)
        if x.requires_grad:
            dcols = np.einsum("ngoyx,gocij->ngcyxij", g5, wg, optimize=True).reshape(n, cin, ho, wo, kh, kw)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[_tap(i, j, stride, ho, wo)] += dcols[..., i, j]
            gx = _crop_pad(dxp, pad, h, wid)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if bias is None else (x, w, bias)
    return make_result(out, parents, backward, "conv2d")


def _tap(i: int, j: int, stride: int, ho: int, wo: int) -> tuple[slice, ...]:
    """Index of the input positions kernel tap ``(i, j)`` reads for every output pixel."""
    return (
        slice(None),
        slice(None),
        slice(i, i + stride * (ho - 1) + 1, stride),
        slice(j, j + stride * (wo - 1) + 1, stride),
    )


def _crop_pad(dxp: np.ndarray, pad: int, h: int, w: int) -> np.ndarray:
    return dxp[:, :, pad : pad + h, pad : pad + w]


def _depthwise_conv(
    x: Tensor, w: Tensor, bias: Tensor | None, xp: np.ndarray, stride: int, pad: int, ho: int, wo: int
) -> Tensor:
    """One filter per channel, as a sum of shifted and scaled input views."""
    n, c, h, wid = x.shape
    _, _, kh, kw = w.shape
    wd = w.data
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(xp, wd))
    for i in range(kh):
        for j in range(kw):
            out += wd[:, 0, i, j].reshape(1, c, 1, 1) * xp[_tap(i, j, stride, ho, wo)]
    if bias is not None:
        out += bias.data.reshape(1, c, 1, 1)

    def backward(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        gx = gw = None
        if w.requires_grad:
            gw = np.zeros(wd.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gw[:, 0, i, j] = (g * xp[_tap(i, j, stride, ho, wo)]).sum(axis=(0, 2, 3))
        if x.requires_grad:
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[_tap(i, j, stride, ho, wo)] += g * wd[:, 0, i, j].reshape(1, c, 1, 1)
            gx = _crop_pad(dxp, pad, h, wid)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if bias is None else (x, w, bias)
    return make_result(out, parents, backward, "conv2d")


def _im2col_conv(
    x: Tensor, w: Tensor, bias: Tensor | None, xp: np.ndarray, stride: int, pad: int, ho: int, wo: int
) -> Tensor:
    """Dense conv as one BLAS product against the unfolded input columns."""
    n, cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    wd = w.data
    w2 = wd.reshape(cout, cin * kh * kw)
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(cols.transpose(0, 1, 4, 5, 2, 3)).reshape(n, cin * kh * kw, ho * wo)
    out = np.matmul(w2, cols).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def backward(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        g3 = g.reshape(n, cout, ho * wo)
        gx = gw = None
        if w.requires_grad:
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        if x.requires_grad:
            dcols = np.matmul(w2.T, g3).reshape(n, cin, kh, kw, ho, wo)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[_tap(i, j, stride, ho, wo)] += dcols[:, :, i, j]
            gx = _crop_pad(dxp, pad, h, wid)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if bias is None else (x, w, bias)
    return make_result(out, parents, backward, "conv2d")


# --- normalisation and activations ---


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise each spatial token over the channel axis (axis 1)."""
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layernorm: affine {gamma.shape}/{beta.shape} for {c} channels")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def backward(g: np.ndarray) -> tuple[np.ndarray | None, ...]:
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            gx = rstd * (
                dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            )
        ggamma = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gbeta = g.sum(axis=red) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward, "layernorm")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF via erf."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT_2))
    out = xd * cdf

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make_result(out.astype(xd.dtype, copy=False), (x,), backward, "gelu")


def masked_softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis with an additive 0 / -inf mask.

    Raises:
        ShapeError: If the mask does not broadcast or excludes a whole row
    """
    z = logits.data
    if mask is not None:
        mask = mask.astype(z.dtype, copy=False)
        try:
            fits = np.broadcast_shapes(mask.shape, z.shape) == z.shape
        except ValueError:
            fits = False
        if not fits:
            raise ShapeError(f"mask {mask.shape} does not broadcast to logits {z.shape}")
        # rows are checked on the mask itself; broadcasting cannot open a closed row
        if not np.isfinite(mask).any(axis=-1).all():
            raise ShapeError("attention mask excludes every position of a row")
        z = z + mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_result(s, (logits,), backward, "masked_softmax")


def global_avg_pool(x: Tensor, valid: np.ndarray | None = None) -> Tensor:
    """Per-channel spatial mean, optionally over the positions where ``valid`` is 1.

    Args:
        x: ``[N, C, H, W]``
        valid: Optional 0/1 map broadcastable to ``[N, 1, H, W]``

    Returns:
        ``[N, C, 1, 1]``
    """
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool needs [N, C, H, W], got {x.shape}")
    xd = x.data
    shape = x.shape
    if valid is None:
        count = shape[2] * shape[3]
        out = xd.mean(axis=(2, 3), keepdims=True)
        return make_result(out, (x,), lambda g: (np.broadcast_to(g / count, shape).copy(),), "global_avg_pool")

    v = np.broadcast_to(valid.astype(xd.dtype, copy=False), (shape[0], 1, shape[2], shape[3]))
    count = v.sum(axis=(2, 3), keepdims=True)
    out = (xd * v).sum(axis=(2, 3), keepdims=True) / count
    return make_result(out, (x,), lambda g: (g * v / count,), "global_avg_pool")


# --- rearrangements ---


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """``[N, C, H, W] -> [N, C*r*r, H/r, W/r]`` with ``c' = c*r*r + dy*r + dx``."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: {h}x{w} not divisible by {r}")
    out = x.data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(n, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h, w),)

    return make_result(out, (x,), backward, "pixel_unshuffle")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of ``pixel_unshuffle``."""
    n, cr, h, w = x.shape
    if cr % (r * r):
        raise ShapeError(f"pixel_shuffle: {cr} channels not divisible by {r * r}")
    c = cr // (r * r)
    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, cr, h, w),)

    return make_result(out, (x,), backward, "pixel_shuffle")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return make_result(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    """Cyclic shift; the backward pass rolls the gradient back."""
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    return make_result(np.roll(x.data, shifts, axes), (x,), lambda g: (np.roll(g, back, axes),), "roll")


def pad2d(x: Tensor, bottom: int, right: int) -> Tensor:
    """Zero-pad the last two axes at the bottom/right."""
    if bottom < 0 or right < 0:
        raise ShapeError(f"pad2d amounts must be non-negative, got {bottom}, {right}")
    if bottom == 0 and right == 0:
        return x
    h, w = x.shape[-2:]
    widths = [(0, 0)] * (x.ndim - 2) + [(0, bottom), (0, right)]
    return make_result(np.pad(x.data, widths), (x,), lambda g: (g[..., :h, :w],), "pad2d")


def crop2d(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left ``h x w`` of the last two axes."""
    hh, ww = x.shape[-2:]
    if h > hh or w > ww:
        raise ShapeError(f"crop2d: {h}x{w} exceeds {hh}x{ww}")
    if (h, w) == (hh, ww):
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(0, hh - h), (0, ww - w)]
    return make_result(x.data[..., :h, :w], (x,), lambda g: (np.pad(g, widths),), "crop2d")


def fit2d(x: Tensor, h: int, w: int) -> Tensor:
    """Crop and/or zero-pad the last two axes to exactly ``h x w``."""
    hh, ww = x.shape[-2:]
    x = crop2d(x, min(h, hh), min(w, ww))
    return pad2d(x, h - x.shape[-2], w - x.shape[-1])


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: {t.shape} incompatible with {ref} along axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape, dtype = x.shape, x.dtype

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return make_result(x.data[index], (x,), backward, "slice")


def chunk(x: Tensor, parts: int, axis: int = 1) -> list[Tensor]:
    size = x.shape[axis]
    if size % parts:
        raise ShapeError(f"chunk: axis {axis} of size {size} not divisible into {parts}")
    step = size // parts
    return [slice_axis(x, i * step, (i + 1) * step, axis) for i in range(parts)]


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows ``table[index]``; gradients scatter-add back."""
    shape = table.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return make_result(table.data[index], (table,), backward, "take_rows")
