"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Covers exactly the operation set the network needs: broadcasting
arithmetic, batched matmul, pointwise and dilated temporal convolutions,
reductions, activations, concatenation, node gathering and a stable
softmax cross-entropy. Arrays are numpy, float32 for training and
float64 for gradient verification.

Gradient conventions:
  * ``max`` reductions route the gradient to the first arg-max index.
  * Backward visits every tape node exactly once in reverse
    topological order; leaf gradients accumulate into ``.grad``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, ShapeError, ConfigError

Array = np.ndarray

_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling tape construction (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense array participating in reverse-mode differentiation."""

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward: Optional[Callable] = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data: Array = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self._parents = _parents if _GRAD_ENABLED else ()
        self._backward = _backward if _GRAD_ENABLED else None
        if not _GRAD_ENABLED:
            self.requires_grad = False

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> Array:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------------
    def backward(self, grad: Optional[Array] = None) -> None:
        """Propagate gradients from this node to every reachable leaf."""
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, Array] = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, axis, "sum", keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, axis, "mean", keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce(self, axis, "max", keepdims)


class Parameter(Tensor):
    """Trainable tensor accumulating a gradient of identical shape."""

    def __init__(self, data, name: str = "", trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name or '<anon>'}, shape={self.shape})"


def ensure_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


# ---------------------------------------------------------------------------
# elementwise arithmetic (with numpy broadcasting)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = ensure_tensor(a, b if isinstance(b, Tensor) else None)
    b = ensure_tensor(b, a)
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out_data, requires_grad=a.requires_grad or b.requires_grad,
                  _parents=(a, b), _backward=backward)


def sub(a, b) -> Tensor:
    a = ensure_tensor(a, b if isinstance(b, Tensor) else None)
    b = ensure_tensor(b, a)
    out_data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(out_data, requires_grad=a.requires_grad or b.requires_grad,
                  _parents=(a, b), _backward=backward)


def mul(a, b) -> Tensor:
    a = ensure_tensor(a, b if isinstance(b, Tensor) else None)
    b = ensure_tensor(b, a)
    out_data = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, requires_grad=a.requires_grad or b.requires_grad,
                  _parents=(a, b), _backward=backward)


def div(a, b) -> Tensor:
    a = ensure_tensor(a, b if isinstance(b, Tensor) else None)
    b = ensure_tensor(b, a)
    out_data = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor(out_data, requires_grad=a.requires_grad or b.requires_grad,
                  _parents=(a, b), _backward=backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        return (-g,)

    return Tensor(-a.data, requires_grad=a.requires_grad, _parents=(a,), _backward=backward)


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    out_data = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return Tensor(out_data, requires_grad=a.requires_grad, _parents=(a,), _backward=backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        return (g * out_data,)

    return Tensor(out_data, requires_grad=a.requires_grad, _parents=(a,), _backward=backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        return (g / a.data,)

    return Tensor(np.log(a.data), requires_grad=a.requires_grad, _parents=(a,), _backward=backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out_data,)

    return Tensor(out_data, requires_grad=a.requires_grad, _parents=(a,), _backward=backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
    old_shape = a.shape

    def backward(g):
        return (g.reshape(old_shape),)

    return Tensor(a.data.reshape(shape), requires_grad=a.requires_grad,
                  _parents=(a,), _backward=backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return Tensor(a.data.transpose(axes), requires_grad=a.requires_grad,
                  _parents=(a,), _backward=backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return Tensor(out_data, requires_grad=any(t.requires_grad for t in tensors),
                  _parents=tuple(tensors), _backward=backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: Optional[int] = None,
               step: int = 1) -> Tensor:
    """Basic strided slice along one axis (differentiable)."""
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop, step)
    sl = tuple(sl)

    def backward(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return (full,)

    return Tensor(a.data[sl], requires_grad=a.requires_grad, _parents=(a,), _backward=backward)


def pad_axis(a: Tensor, axis: int, before: int, after: int, value: float = 0.0) -> Tensor:
    """Constant padding along one axis."""
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out_data = np.pad(a.data, widths, constant_values=value)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(before, before + a.shape[axis])
    sl = tuple(sl)

    def backward(g):
        return (g[sl],)

    return Tensor(out_data, requires_grad=a.requires_grad, _parents=(a,), _backward=backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product with numpy-style batch broadcasting over leading dims."""
    a = ensure_tensor(a, b if isinstance(b, Tensor) else None)
    b = ensure_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(out_data, requires_grad=a.requires_grad or b.requires_grad,
                  _parents=(a, b), _backward=backward)


def _channel_map(w: Array, x: Array) -> Array:
    """Apply (o, i) channel map to (..., i, T, V) via BLAS matmul."""
    lead = x.shape[:-3]
    i, t, v = x.shape[-3:]
    out = np.matmul(w, x.reshape(lead + (i, t * v)))
    return out.reshape(lead + (w.shape[0], t, v))


def _channel_map_grad_w(g: Array, x: Array) -> Array:
    """Weight gradient of a channel map: contract everything but channels."""
    o, i = g.shape[-3], x.shape[-3]
    g2 = np.moveaxis(g.reshape((-1,) + g.shape[-3:]), 1, 0).reshape(o, -1)
    x2 = np.moveaxis(x.reshape((-1,) + x.shape[-3:]), 1, 0).reshape(i, -1)
    return np.matmul(g2, x2.T)


def pointwise_conv(x: Tensor, weight: Tensor) -> Tensor:
    """Per-location channel mixing on (..., C_in, T, V) with weight (C_out, C_in)."""
    if x.ndim < 3:
        raise ShapeError(f"pointwise_conv expects (..., C, T, V), got {x.shape}")
    if weight.ndim != 2 or weight.shape[1] != x.shape[-3]:
        raise ShapeError(
            f"pointwise_conv channel mismatch: weight {weight.shape} vs input {x.shape}")
    out_data = _channel_map(weight.data, x.data)

    def backward(g):
        gw = _channel_map_grad_w(g, x.data)
        gx = _channel_map(weight.data.T, g)
        return gx, gw

    return Tensor(out_data, requires_grad=x.requires_grad or weight.requires_grad,
                  _parents=(x, weight), _backward=backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map on the last axis: x (..., C_in) -> (..., C_out)."""
    if weight.shape[1] != x.shape[-1]:
        raise ShapeError(f"linear channel mismatch: weight {weight.shape} vs input {x.shape}")
    out = matmul(x, transpose(weight, (1, 0)))
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def reduce(x: Tensor, axis, mode: str, keepdims: bool = False) -> Tensor:
    """Reduction along ``axis`` with mode in {mean, max, sum}.

    Max routes the gradient to the first arg-max index on ties.
    """
    if mode not in ("mean", "max", "sum"):
        raise ConfigError(f"unknown reduce mode {mode!r}")
    if axis is not None and not isinstance(axis, tuple):
        axis = (axis,) if isinstance(axis, int) else tuple(axis)
    if axis is not None:
        for ax in axis:
            if x.shape[ax] == 0:
                raise ShapeError(f"cannot reduce over empty axis {ax} of shape {x.shape}")

    if mode in ("sum", "mean"):
        out_data = getattr(np, mode)(x.data, axis=axis, keepdims=keepdims)
        count = x.size // out_data.size if mode == "mean" else 1

        def backward(g):
            if not keepdims and axis is not None:
                g = np.expand_dims(g, axis)
            g = np.broadcast_to(g, x.shape).astype(x.dtype)
            return (g / count if mode == "mean" else g.copy(),)

        return Tensor(out_data, requires_grad=x.requires_grad, _parents=(x,), _backward=backward)

    # max: reduce one axis at a time would complicate tie routing; restrict
    # to a single axis (all call sites comply).
    if axis is None or len(axis) != 1:
        raise ConfigError("max reduction supports exactly one axis")
    ax = axis[0] % x.ndim
    idx = np.argmax(x.data, axis=ax)  # first index on ties
    out_data = np.take_along_axis(x.data, np.expand_dims(idx, ax), axis=ax)
    squeezed = out_data if keepdims else np.squeeze(out_data, axis=ax)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(idx, ax), g, axis=ax)
        return (full,)

    return Tensor(squeezed, requires_grad=x.requires_grad, _parents=(x,), _backward=backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0.0).astype(x.dtype)

    def backward(g):
        return (g * mask,)

    return Tensor(out_data, requires_grad=x.requires_grad, _parents=(x,), _backward=backward)


def sigmoid(x: Tensor) -> Tensor:
    # computed via tanh for numerical stability on large |x|
    out_data = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def backward(g):
        return (g * out_data * (1.0 - out_data),)

    return Tensor(out_data, requires_grad=x.requires_grad, _parents=(x,), _backward=backward)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# temporal convolution and pooling
# ---------------------------------------------------------------------------

def _check_temporal_args(T: int, kernel: int, dilation: int, stride: int) -> int:
    if kernel % 2 != 1:
        raise ConfigError(f"temporal kernel must be odd, got {kernel}")
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    if stride not in (1, 2):
        raise ConfigError(f"stride must be 1 or 2, got {stride}")
    pad = dilation * (kernel - 1) // 2
    if dilation * (kernel - 1) + 1 > T + 2 * pad:
        raise ConfigError(
            f"effective kernel {dilation * (kernel - 1) + 1} exceeds padded length {T + 2 * pad}")
    return pad


def temporal_conv(x: Tensor, weight: Tensor, kernel: int, dilation: int = 1,
                  stride: int = 1) -> Tensor:
    """1-D convolution along the frame axis of (..., C_in, T, V).

    ``weight`` has shape (C_out, C_in, kernel). Symmetric zero padding
    keeps the stride-1 output at T frames; output length is ceil(T/stride).
    """
    if x.ndim < 3:
        raise ShapeError(f"temporal_conv expects (..., C, T, V), got {x.shape}")
    if weight.ndim != 3 or weight.shape[2] != kernel or weight.shape[1] != x.shape[-3]:
        raise ShapeError(
            f"temporal_conv weight {weight.shape} incompatible with input {x.shape}, kernel {kernel}")
    T = x.shape[-2]
    pad = _check_temporal_args(T, kernel, dilation, stride)
    T_out = -(-T // stride)  # ceil

    widths = [(0, 0)] * x.ndim
    widths[-2] = (pad, pad)
    xp = np.pad(x.data, widths)
    out_data = None
    taps = []
    for k in range(kernel):
        start = k * dilation
        sl = [slice(None)] * x.ndim
        sl[-2] = slice(start, start + stride * (T_out - 1) + 1, stride)
        tap = xp[tuple(sl)]
        taps.append((start, tap))
        contrib = _channel_map(weight.data[:, :, k], tap)
        out_data = contrib if out_data is None else out_data + contrib

    def backward(g):
        gw = np.zeros_like(weight.data)
        gxp = np.zeros_like(xp)
        for k, (start, tap) in enumerate(taps):
            gw[:, :, k] = _channel_map_grad_w(g, tap)
            sl = [slice(None)] * x.ndim
            sl[-2] = slice(start, start + stride * (T_out - 1) + 1, stride)
            gxp[tuple(sl)] += _channel_map(weight.data[:, :, k].T, g)
        sl = [slice(None)] * x.ndim
        sl[-2] = slice(pad, pad + T)
        return gxp[tuple(sl)], gw

    return Tensor(out_data, requires_grad=x.requires_grad or weight.requires_grad,
                  _parents=(x, weight), _backward=backward)


def max_pool_time(x: Tensor, kernel: int = 3, stride: int = 1) -> Tensor:
    """Max pooling along the frame axis with symmetric -inf padding."""
    T = x.shape[-2]
    pad = _check_temporal_args(T, kernel, 1, stride)
    T_out = -(-T // stride)
    widths = [(0, 0)] * x.ndim
    widths[-2] = (pad, pad)
    xp = np.pad(x.data, widths, constant_values=-np.inf)
    windows = []
    for k in range(kernel):
        sl = [slice(None)] * x.ndim
        sl[-2] = slice(k, k + stride * (T_out - 1) + 1, stride)
        windows.append(xp[tuple(sl)])
    stacked = np.stack(windows, axis=-1)
    idx = np.argmax(stacked, axis=-1)
    out_data = np.take_along_axis(stacked, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros_like(xp)
        for k in range(kernel):
            mask = idx == k
            sl = [slice(None)] * x.ndim
            sl[-2] = slice(k, k + stride * (T_out - 1) + 1, stride)
            np.add.at(gxp, tuple(sl), g * mask)
        sl = [slice(None)] * x.ndim
        sl[-2] = slice(pad, pad + T)
        return (gxp[tuple(sl)],)

    return Tensor(out_data, requires_grad=x.requires_grad, _parents=(x,), _backward=backward)


# ---------------------------------------------------------------------------
# gathering (k-NN neighborhoods)
# ---------------------------------------------------------------------------

def gather_nodes(x: Tensor, idx: Array) -> Tensor:
    """Gather neighbor features: x (N, C, V), idx (N, V, K) -> (N, C, V, K).

    ``idx`` is a constant; gradients flow only through the gathered values.
    """
    if x.ndim != 3 or idx.ndim != 3 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_nodes expects x (N,C,V) and idx (N,V,K), got {x.shape}, {idx.shape}")
    N, C, V = x.shape
    _, Vq, K = idx.shape
    flat = idx.reshape(N, 1, Vq * K)
    gathered = np.take_along_axis(x.data, np.broadcast_to(flat, (N, C, Vq * K)), axis=2)
    out_data = gathered.reshape(N, C, Vq, K)

    def backward(g):
        gx = np.zeros_like(x.data)
        gflat = g.reshape(N, C, Vq * K)
        # fixed-order scatter-add keeps accumulation deterministic
        for n in range(N):
            np.add.at(gx[n], (slice(None), flat[n, 0]), gflat[n])
        return (gx,)

    return Tensor(out_data, requires_grad=x.requires_grad, _parents=(x,), _backward=backward)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax(logits: Array, axis: int = -1) -> Array:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under row-wise softmax.

    Computed in log-space (log-sum-exp) for stability.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (N, K) logits, got {logits.shape}")
    N, K = logits.shape
    if labels.shape != (N,):
        raise ShapeError(f"labels shape {labels.shape} != ({N},)")
    if labels.min() < 0 or labels.max() >= K:
        raise DataError(f"label out of range [0, {K}): {labels.min()}..{labels.max()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1)) + logits.data.max(axis=1)
    picked = logits.data[np.arange(N), labels]
    loss = float(np.mean(lse - picked))

    def backward(g):
        probs = softmax(logits.data, axis=1)
        probs[np.arange(N), labels] -= 1.0
        return (probs * (g / N),)

    return Tensor(np.asarray(loss, dtype=logits.dtype), requires_grad=logits.requires_grad,
                  _parents=(logits,), _backward=backward)
