"""Layer primitives shared by the network: parameter modules, fan-in
initialization, batch normalization and thin conv wrappers.
"""

from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Parameter, Tensor


def fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int,
                   dtype=np.float32) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Base class with recursive parameter discovery over attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            yield from _walk(name, value)

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameters plus non-trainable buffers (running stats)."""
        out = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            out[name] = buf
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise ConfigError(f"state dict missing entries: {sorted(missing)[:5]} ...")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data[...] = arr
        for name, buf in buffers.items():
            arr = np.asarray(state[name], dtype=buf.dtype)
            if arr.shape != buf.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != buffer shape {buf.shape}")
            buf[...] = arr

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            yield from _walk_buffers(name, value)


def _walk(name, value):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)


def _walk_buffers(name, value):
    if isinstance(value, Module):
        yield from value.named_buffers(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_buffers(f"{name}.{i}", item)
    elif isinstance(value, np.ndarray):
        yield name, value


class PointwiseConv(Module):
    """1x1 channel mixing over (..., C, T, V)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter(fan_in_uniform(rng, (c_out, c_in), c_in, dtype), name="pw")

    def __call__(self, x: Tensor) -> Tensor:
        return T.pointwise_conv(x, self.weight)


class TemporalConv(Module):
    """Dilated 1-D convolution along the frame axis."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 dilation: int = 1, stride: int = 1, dtype=np.float32):
        self.kernel = kernel
        self.dilation = dilation
        self.stride = stride
        self.weight = Parameter(
            fan_in_uniform(rng, (c_out, c_in, kernel), c_in * kernel, dtype), name="tconv")

    def __call__(self, x: Tensor) -> Tensor:
        return T.temporal_conv(x, self.weight, self.kernel, self.dilation, self.stride)


class Linear(Module):
    """Affine map over the last axis."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter(fan_in_uniform(rng, (c_out, c_in), c_in, dtype), name="fc.w")
        self.bias = Parameter(np.zeros(c_out, dtype=dtype), name="fc.b")

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Per-channel batch normalization over (..., C, T, V).

    Scale initializes to 1, shift to 0; running statistics use momentum
    0.1 and epsilon 1e-5. In eval mode the running statistics are
    applied as constants.
    """

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1,
                 eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels, dtype=dtype), name="bn.gamma")
        self.beta = Parameter(np.zeros(channels, dtype=dtype), name="bn.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.channels = channels

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.shape[-3] != self.channels:
            raise ShapeError(f"batch norm expects {self.channels} channels, got shape {x.shape}")
        axes = tuple(i for i in range(x.ndim) if i != x.ndim - 3)
        shape = (1,) * (x.ndim - 3) + (self.channels, 1, 1)
        if training:
            mean = x.mean(axis=axes, keepdims=True)
            centered = x - mean
            var = T.power(centered, 2.0).mean(axis=axes, keepdims=True)
            self.running_mean += self.momentum * (
                mean.data.reshape(self.channels).astype(self.running_mean.dtype) - self.running_mean)
            self.running_var += self.momentum * (
                var.data.reshape(self.channels).astype(self.running_var.dtype) - self.running_var)
            xn = centered / T.sqrt(var + Tensor(np.asarray(self.eps, dtype=x.dtype)))
        else:
            mean = Tensor(self.running_mean.reshape(shape).astype(x.dtype))
            std = Tensor(np.sqrt(self.running_var + self.eps).reshape(shape).astype(x.dtype))
            xn = (x - mean) / std
        gamma = T.reshape(self.gamma, shape)
        beta = T.reshape(self.beta, shape)
        return xn * gamma + beta


def batch_norm(x: Tensor, params: BatchNorm, training_flag: bool) -> Tensor:
    """Functional alias matching the op-style call convention."""
    return params(x, training_flag)
