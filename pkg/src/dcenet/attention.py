"""Scaled dot-product self-attention with sinusoidal position encodings."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nn import Module, uniform_init


def positional_encoding(steps: int, dim: int) -> np.ndarray:
    """``p[t, d] = sin(t / 10000**(d/D))`` for even d, ``cos`` of the same for odd d."""
    if steps < 1 or dim < 1:
        raise ValueError(f"positional_encoding needs steps, dim >= 1, got {steps}, {dim}")
    t = np.arange(steps, dtype=np.float64)[:, None]
    d = np.arange(dim, dtype=np.float64)[None, :]
    angle = t / np.power(10000.0, d / dim)
    return np.where(np.arange(dim) % 2 == 0, np.sin(angle), np.cos(angle))


def attention_weights(Q: Tensor, K: Tensor) -> Tensor:
    d = Q.shape[-1]
    return ad.softmax(ad.matmul(Q, ad.swapaxes(K, -1, -2)) * (1.0 / np.sqrt(d)), axis=-1)


def scaled_dot_attention(Q, K, V) -> Tensor:
    """``softmax(Q K^T / sqrt(d)) V`` without masking."""
    Q, K, V = ad.as_tensor(Q), ad.as_tensor(K), ad.as_tensor(V)
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeError(f"attention shapes Q={Q.shape}, K={K.shape}, V={V.shape} are incompatible")
    return ad.matmul(attention_weights(Q, K), V)


class AttentionLayer(Module):
    """Multi-head self-attention: projections ``[d_in, d_k]`` split into ``heads`` slices."""

    def __init__(self, d_in: int, d_k: int, heads: int, rng: np.random.Generator, residual: bool = False):
        if heads < 1 or d_k % heads != 0:
            raise ValueError(f"d_k={d_k} is not divisible by heads={heads}")
        if residual and d_in != d_k:
            raise ValueError("residual connection needs d_in == d_k")
        self.d_in = d_in
        self.d_k = d_k
        self.heads = heads
        self.residual = residual
        self.w_q = uniform_init(rng, (d_in, d_k), d_in)
        self.w_k = uniform_init(rng, (d_in, d_k), d_in)
        self.w_v = uniform_init(rng, (d_in, d_k), d_in)
        self.w_o = uniform_init(rng, (d_k, d_k), d_k)

    def __call__(self, x: Tensor) -> Tensor:
        return multi_head(self, x)


def _split_heads(t: Tensor, heads: int) -> Tensor:
    # [..., T, d_k] -> [..., heads, T, d_k / heads]
    *lead, T, d = t.shape
    t = ad.reshape(t, tuple(lead) + (T, heads, d // heads))
    n = len(lead)
    axes = tuple(range(n)) + (n + 1, n, n + 2)
    return ad.transpose(t, axes)


def _merge_heads(t: Tensor) -> Tensor:
    *lead, heads, T, dh = t.shape
    n = len(lead)
    t = ad.transpose(t, tuple(range(n)) + (n + 1, n, n + 2))
    return ad.reshape(t, tuple(lead) + (T, heads * dh))


def multi_head(layer: AttentionLayer, x: Tensor) -> Tensor:
    x = ad.as_tensor(x)
    if x.shape[-1] != layer.d_in:
        raise ShapeError(f"attention layer expects trailing dim {layer.d_in}, got {x.shape}")
    Q = _split_heads(x @ layer.w_q, layer.heads)
    K = _split_heads(x @ layer.w_k, layer.heads)
    V = _split_heads(x @ layer.w_v, layer.heads)
    out = _merge_heads(scaled_dot_attention(Q, K, V)) @ layer.w_o
    if layer.residual:
        out = out + x
    return out


def self_attention_encode(layers, x: Tensor, position_encoding: str = "each") -> Tensor:
    """Run stacked attention layers over ``x[..., T, d]``.

    ``position_encoding`` is ``"each"`` (added before every layer), ``"once"``
    (before the first only) or ``"none"``.
    """
    if not layers:
        raise ValueError("self_attention_encode needs at least one layer")
    if position_encoding not in ("each", "once", "none"):
        raise ValueError(f"unknown position_encoding mode {position_encoding!r}")
    x = ad.as_tensor(x)
    for i, layer in enumerate(layers):
        if position_encoding == "each" or (position_encoding == "once" and i == 0):
            x = x + positional_encoding(x.shape[-2], x.shape[-1])
        x = layer(x)
    return x
