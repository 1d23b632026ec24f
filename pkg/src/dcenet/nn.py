"""Layers and optimizers on top of :mod:`dcenet.autodiff`.

All layers accept arbitrary leading batch axes; only the trailing axis (and,
for :class:`Conv1d`, the time axis before it) is interpreted.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


class Module:
    """Container that discovers parameters and submodules by attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = uniform_init(rng, (out_features, in_features), in_features)
        self.bias = uniform_init(rng, (out_features,), in_features)

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(self, x)


def linear_forward(layer: Linear, x: Tensor) -> Tensor:
    """``x @ W.T + b`` over the trailing axis."""
    x = ad.as_tensor(x)
    if x.shape[-1] != layer.in_features:
        raise ShapeError(f"linear expects trailing dim {layer.in_features}, got shape {x.shape}")
    if x.ndim == 1:
        return ad.reshape(ad.reshape(x, (1, -1)) @ ad.transpose(layer.weight), (-1,)) + layer.bias
    return x @ ad.transpose(layer.weight) + layer.bias


class Conv1d(Module):
    """Same-length temporal convolution; kernel stored as ``[out, in, k]``."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel_size: int = 3):
        if kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd for same padding, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        fan_in = in_channels * kernel_size
        self.kernel = uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in)
        self.bias = uniform_init(rng, (out_channels,), fan_in)

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d_forward(self, x)


def conv1d_forward(layer: Conv1d, x: Tensor) -> Tensor:
    """Convolve ``x[..., T, in]`` over T with zero padding, returning ``[..., T, out]``.

    No activation is applied here.
    """
    x = ad.as_tensor(x)
    if x.ndim < 2 or x.shape[-1] != layer.in_channels:
        raise ShapeError(f"conv1d expects [..., T, {layer.in_channels}], got shape {x.shape}")
    k = layer.kernel_size
    half = k // 2
    steps = x.shape[-2]
    padded = ad.pad_axis(x, -2, half, half)
    # im2col: block j holds x[t + j - half]
    cols = ad.concat([padded[..., j : j + steps, :] for j in range(k)], axis=-1)
    w = ad.reshape(ad.transpose(layer.kernel, (2, 1, 0)), (k * layer.in_channels, layer.out_channels))
    return cols @ w + layer.bias


class LstmCell(Module):
    """Gate order along the 4H axis: input, forget, candidate, output."""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_ih = uniform_init(rng, (4 * hidden_size, input_size), input_size)
        self.w_hh = uniform_init(rng, (4 * hidden_size, hidden_size), hidden_size)
        self.bias = uniform_init(rng, (4 * hidden_size,), hidden_size)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        return lstm_step(self, x, h, c)

    def initial_state(self, batch_shape: tuple = ()) -> tuple[Tensor, Tensor]:
        zeros = np.zeros(batch_shape + (self.hidden_size,))
        return Tensor(zeros), Tensor(zeros.copy())


def lstm_step(cell: LstmCell, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    x, h, c = ad.as_tensor(x), ad.as_tensor(h), ad.as_tensor(c)
    H = cell.hidden_size
    if x.shape[-1] != cell.input_size or h.shape[-1] != H or c.shape[-1] != H:
        raise ShapeError(
            f"lstm_step shapes x={x.shape}, h={h.shape}, c={c.shape} "
            f"do not match input {cell.input_size}, hidden {H}"
        )
    squeeze = x.ndim == 1
    if squeeze:
        x, h, c = (ad.reshape(t, (1, -1)) for t in (x, h, c))
    z = x @ ad.transpose(cell.w_ih) + h @ ad.transpose(cell.w_hh) + cell.bias
    i = ad.sigmoid(z[..., 0:H])
    f = ad.sigmoid(z[..., H : 2 * H])
    g = ad.tanh(z[..., 2 * H : 3 * H])
    o = ad.sigmoid(z[..., 3 * H : 4 * H])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    if squeeze:
        return ad.reshape(h_new, (-1,)), ad.reshape(c_new, (-1,))
    return h_new, c_new


class Optimizer:
    """Plain SGD (``variant="sgd"``) or Adam (``variant="adam"``).

    Moment buffers are keyed by parameter position and shaped like it.
    """

    def __init__(
        self,
        params,
        learning_rate: float = 1e-3,
        variant: str = "adam",
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if variant not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer variant {variant!r}")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.variant = variant
        self.betas = betas
        self.eps = eps
        self.t = 0
        if variant == "adam":
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        optimizer_step(self, self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def optimizer_step(opt: Optimizer, params) -> None:
    """Update ``params`` in place from their grads; grads are left as they are."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise RuntimeError("optimizer_step called on a parameter with no gradient")
    lr = opt.learning_rate
    if opt.variant == "sgd":
        for p in params:
            p.data -= lr * p.grad
        return
    opt.t += 1
    b1, b2 = opt.betas
    index = {id(q): i for i, q in enumerate(opt.params)}
    for p in params:
        i = index[id(p)]
        m, v = opt.m[i], opt.v[i]
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * p.grad * p.grad
        m_hat = m / (1 - b1**opt.t)
        v_hat = v / (1 - b2**opt.t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)
