"""Attention-guided aggregation over the hierarchy axis.

The per-hierarchy feature stack is pooled to one vector per hierarchy
layer (representative pooling restricted to that layer's node sets, or
plain spatial averaging), optionally mixed across hierarchy nodes by an
edge convolution over their feature-space k-NN graph, squashed through
a sigmoid into an attention map, and used as weights for the sum over
the hierarchy axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .hdgc import edge_conv, knn_indices
from .hdgraph import HierarchyDecomposition
from .nn import Module, fan_in_uniform
from .tensor import Parameter, Tensor

AHA_MODES = ("none", "sap", "rsap")


@dataclass
class AHAConfig:
    """Attention ablation switches (pooling kind x hierarchy EdgeConv)."""
    mode: str = "rsap"
    use_h_edgeconv: bool = True
    h_knn_k: int = 2
    per_channel: bool = True

    def validate(self, n_l: int) -> None:
        if self.mode not in AHA_MODES:
            raise ConfigError(f"aha mode must be one of {AHA_MODES}, got {self.mode!r}")
        if self.mode != "none" and self.use_h_edgeconv and not 1 <= self.h_knn_k < n_l:
            raise ConfigError(f"h_knn_k must be in [1, N_L), got {self.h_knn_k} with N_L={n_l}")


def layer_mask(decomp: HierarchyDecomposition) -> Tuple[np.ndarray, np.ndarray]:
    """(N_L, V) membership mask of H_k u H_{k+1} and per-layer node counts."""
    V = decomp.num_joints
    mask = np.zeros((decomp.n_l, V), dtype=np.float64)
    for k in range(decomp.n_l):
        inner, outer = decomp.layer_members(k)
        for j in inner + outer:
            mask[k, j - 1] = 1.0
    counts = mask.sum(axis=1)
    return mask, counts


def rsap(stack: Tensor, decomp: HierarchyDecomposition) -> Tensor:
    """Representative pooling: per layer, max over frames then average
    restricted to the joints of H_k u H_{k+1}.

    ``stack`` is (N, C, N_L, T, V); returns (N, C, N_L).
    """
    if stack.ndim != 5 or stack.shape[2] != decomp.n_l or stack.shape[4] != decomp.num_joints:
        raise ShapeError(
            f"rsap expects (N, C, {decomp.n_l}, T, {decomp.num_joints}), got {stack.shape}")
    mask, counts = layer_mask(decomp)
    peaked = stack.max(axis=-2)  # (N, C, N_L, V)
    masked = peaked * Tensor(mask.reshape(1, 1, decomp.n_l, -1).astype(stack.dtype))
    total = masked.sum(axis=-1)  # (N, C, N_L)
    return total / Tensor(counts.reshape(1, 1, -1).astype(stack.dtype))


def sap(stack: Tensor) -> Tensor:
    """Plain pooling: max over frames, average over every joint."""
    if stack.ndim != 5:
        raise ShapeError(f"sap expects (N, C, N_L, T, V), got {stack.shape}")
    return stack.max(axis=-2).mean(axis=-1)


def aggregate(stack: Tensor, attention: Tensor) -> Tensor:
    """Weighted sum over the hierarchy axis.

    ``stack`` is (N, C, N_L, T, V), ``attention`` (N, C, N_L) or
    (N, 1, N_L); returns (N, C, T, V).
    """
    N, C, n_l, frames, V = stack.shape
    if attention.ndim != 3 or attention.shape[0] != N or attention.shape[2] != n_l:
        raise ShapeError(f"attention shape {attention.shape} incompatible with stack {stack.shape}")
    weights = T.reshape(attention, (N, attention.shape[1], n_l, 1, 1))
    return (stack * weights).sum(axis=2)


class AHAModule(Module):
    """Pooling, attention map and hierarchy-axis weighted sum."""

    def __init__(self, channels: int, n_l: int, decomp: HierarchyDecomposition,
                 config: AHAConfig, rng: np.random.Generator, dtype=np.float32):
        config.validate(n_l)
        self.config = config
        self.channels = channels
        self.n_l = n_l
        self.decomp = decomp
        self.last_attention: Optional[np.ndarray] = None
        if config.mode != "none":
            c_att = channels if config.per_channel else 1
            c_edge = 2 * channels if config.use_h_edgeconv else channels
            self.att_weight = Parameter(
                fan_in_uniform(rng, (c_att, c_edge), c_edge, dtype), name="aha.w")

    def attention(self, pooled: Tensor) -> Tensor:
        """Sigmoid attention map from pooled hierarchy features (N, C, N_L)."""
        if self.config.use_h_edgeconv:
            idx = knn_indices(pooled.data, self.config.h_knn_k)  # self-loop included
            scores = edge_conv(pooled, idx, self.att_weight)
        else:
            N, C, n_l = pooled.shape
            scores = T.pointwise_conv(T.reshape(pooled, (N, C, n_l, 1)), self.att_weight)
            scores = T.reshape(scores, (N, scores.shape[1], n_l))
        return T.sigmoid(scores)

    def forward(self, stack: Tensor) -> Tensor:
        if self.config.mode == "none":
            N, C, n_l = stack.shape[0], stack.shape[1], stack.shape[2]
            ones = Tensor(np.ones((N, C, n_l), dtype=stack.dtype))
            self.last_attention = ones.data
            return aggregate(stack, ones)
        pooled = rsap(stack, self.decomp) if self.config.mode == "rsap" else sap(stack)
        att = self.attention(pooled)
        self.last_attention = att.data
        return aggregate(stack, att)

    __call__ = forward
