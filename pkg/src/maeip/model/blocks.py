"""CSformer block and its parts: channel attention, window/global MSA and GCFFN.

Every function takes ``p``, the parameters of one block with the
``stage{s}.block{b}.`` prefix stripped (see ``params.scope``).
"""

from __future__ import annotations

from collections.abc import Mapping
from functools import lru_cache

import numpy as np

from ..autograd import Tensor, mac_scope, ops
from ..errors import ShapeError
from ..inference.padding import window_mask, window_partition, window_reverse
from .config import AttnKind, Compose

Params = Mapping[str, Tensor]


def _conv(x: Tensor, p: Params, name: str, **kwargs: int) -> Tensor:
    return ops.conv2d(x, p[f"{name}.weight"], p.get(f"{name}.bias"), **kwargs)


def simple_gate(x: Tensor) -> Tensor:
    """Split channels in half and multiply the halves."""
    if x.shape[1] % 2:
        raise ShapeError(f"simple gate needs an even channel count, got {x.shape[1]}")
    x1, x2 = ops.chunk(x, 2, axis=1)
    return ops.mul(x1, x2)


def channel_attention(x: Tensor, p: Params, valid: np.ndarray | None = None) -> Tensor:
    """Gate, then rescale each channel by ``MLP(Avg(.))``; returns ``d / 2`` channels.

    Args:
        x: ``[N, d, H, W]`` with even ``d``
        p: Block parameters (uses ``ca.mlp1`` and ``ca.mlp2``)
        valid: Optional ``[1, 1, H, W]`` map; pooling averages over its 1-entries

    Raises:
        ShapeError: If ``d`` is odd
    """
    g = simple_gate(x)
    pooled = ops.global_avg_pool(g, valid)
    s = _conv(ops.gelu(_conv(pooled, p, "ca.mlp1")), p, "ca.mlp2")
    return ops.gate_mul(g, s)


def ca_branch(x: Tensor, p: Params, valid: np.ndarray | None = None) -> Tensor:
    """Point-wise projection in, channel attention, point-wise projection back to ``d``."""
    with mac_scope("ca"):
        return _conv(channel_attention(_conv(x, p, "ca.proj_in"), p, valid), p, "ca.proj_out")


@lru_cache(maxsize=8)
def relative_position_index(window: int) -> np.ndarray:
    """Index into the ``(2w-1)**2`` bias table for every token pair of a window, flattened."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    index = rel[0] * (2 * window - 1) + rel[1]
    index.flags.writeable = False
    return index.reshape(-1)


def attend(
    tokens: Tensor,
    p: Params,
    heads: int,
    mask: np.ndarray | None = None,
    window: int | None = None,
) -> Tensor:
    """Multi-head softmax attention over groups of tokens.

    Args:
        tokens: ``[B, L, d]`` where ``B = N * nW``
        p: Block parameters (``msa.qkv``, ``msa.proj``, optional ``msa.rel_bias``)
        heads: Head count, must divide ``d``
        mask: Additive ``[nW, L, L]`` mask shared by every image of the batch
        window: Window side, needed only for the relative position bias

    Returns:
        ``[B, L, d]``
    """
    b, length, d = tokens.shape
    if d % heads:
        raise ShapeError(f"{heads} heads do not divide width {d}")
    dh = d // heads

    with mac_scope("qkv"):
        qkv = ops.linear(tokens, p["msa.qkv.weight"], p["msa.qkv.bias"])
    qkv = ops.transpose(ops.reshape(qkv, (b, length, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = (ops.reshape(t, (b, heads, length, dh)) for t in ops.chunk(qkv, 3, axis=0))

    with mac_scope("logits"):
        logits = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), dh**-0.5)
    if "msa.rel_bias" in p and window is not None:
        table = ops.take_rows(p["msa.rel_bias"], relative_position_index(window))
        bias = ops.transpose(ops.reshape(table, (length, length, heads)), (2, 0, 1))
        logits = ops.add(logits, ops.reshape(bias, (1, heads, length, length)))

    if mask is not None:
        nw = mask.shape[0]
        if b % nw:
            raise ShapeError(f"mask for {nw} windows does not divide a batch of {b}")
        grouped = ops.reshape(logits, (b // nw, nw, heads, length, length))
        attn = ops.masked_softmax(grouped, mask.reshape(1, nw, 1, length, length))
        attn = ops.reshape(attn, (b, heads, length, length))
    else:
        attn = ops.masked_softmax(logits)

    with mac_scope("values"):
        out = ops.matmul(attn, v)
    out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, length, d))
    with mac_scope("proj"):
        return ops.linear(out, p["msa.proj.weight"], p["msa.proj.bias"])


def window_msa(
    x: Tensor,
    p: Params,
    heads: int,
    window: int,
    shift: int = 0,
    pad_mask: np.ndarray | None = None,
) -> Tensor:
    """W-MSA (``shift == 0``) or SW-MSA over ``[N, d, H', W']``.

    Without ``pad_mask`` every position counts as valid; a shifted call then
    gets the plain cyclic-shift mask.
    """
    n, d, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"window_msa: {h}x{w} is not a multiple of window {window}")
    if pad_mask is None and shift:
        pad_mask = window_mask(np.ones((h, w), dtype=bool), window, shift)
    if shift:
        x = ops.roll(x, (-shift, -shift), (2, 3))
    win = window_partition(x, window)
    length = window * window
    tokens = ops.transpose(ops.reshape(win, (win.shape[0], d, length)), (0, 2, 1))
    out = attend(tokens, p, heads, pad_mask, window)
    out = ops.reshape(ops.transpose(out, (0, 2, 1)), (win.shape[0], d, window, window))
    out = window_reverse(out, window, h, w)
    if shift:
        out = ops.roll(out, (shift, shift), (2, 3))
    return out


def global_msa(x: Tensor, p: Params, heads: int, pad_mask: np.ndarray | None = None) -> Tensor:
    """Full attention over all ``h * w`` tokens."""
    n, d, h, w = x.shape
    tokens = ops.transpose(ops.reshape(x, (n, d, h * w)), (0, 2, 1))
    out = attend(tokens, p, heads, pad_mask)
    return ops.reshape(ops.transpose(out, (0, 2, 1)), (n, d, h, w))


def gcffn(x: Tensor, p: Params, valid: np.ndarray | None = None) -> Tensor:
    """Gated conv feed-forward: ``Wp3(gelu(Wd1(Wp1 x)) * Wd2(Wp2 x))``.

    Point-wise outputs are re-zeroed outside ``valid`` before the depth-wise
    3x3 convs.
    """
    hidden = p["ffn.pw1.weight"].shape[0]
    with mac_scope("gcffn"):
        branches = []
        for pw, dw in (("ffn.pw1", "ffn.dw1"), ("ffn.pw2", "ffn.dw2")):
            t = _conv(x, p, pw)
            if valid is not None:
                t = ops.mask_mul(t, valid)
            branches.append(_conv(t, p, dw, pad=1, groups=hidden))
        return _conv(ops.mul(ops.gelu(branches[0]), branches[1]), p, "ffn.pw3")


def csformer_block(
    x: Tensor,
    p: Params,
    attn_kind: AttnKind,
    heads: int,
    window: int = 8,
    pad_mask: np.ndarray | None = None,
    valid: np.ndarray | None = None,
    compose: Compose = Compose.PARALLEL,
    eps: float = 1e-6,
) -> Tensor:
    """``y = x + Attn(LN x)``, ``out = y + GCFFN(LN y)``.

    The attention component sums the CA and MSA branches (parallel) or feeds the
    MSA output through CA (sequential). With ``valid`` the output is zeroed at
    padded positions.
    """
    u = ops.layernorm(x, p["ln1.weight"], p["ln1.bias"], eps)
    if attn_kind is AttnKind.G:
        msa = global_msa(u, p, heads, pad_mask)
    else:
        shift = window // 2 if attn_kind is AttnKind.SW else 0
        msa = window_msa(u, p, heads, window, shift, pad_mask)
    if compose is Compose.PARALLEL:
        attn = ops.add(ca_branch(u, p, valid), msa)
    else:
        attn = ca_branch(msa, p, valid)
    y = ops.add(x, attn)
    out = ops.add(y, gcffn(ops.layernorm(y, p["ln2.weight"], p["ln2.bias"], eps), p, valid))
    if valid is not None:
        out = ops.mask_mul(out, valid)
    return out
