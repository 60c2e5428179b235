"""HD-Graph convolution block.

Per hierarchy layer, features pass through a shared channel reduction,
three subset-wise graph convolutions whose outputs concatenate on the
channel axis, and a spatial edge convolution (S-EdgeConv) over a
feature-space k-NN graph built from temporally pooled features. The
per-layer outputs stack on a hierarchy axis; their attention-weighted
sum happens downstream in the aggregation module.

A conventional single-layer baseline (summed subset outputs over the
physical-edge adjacency) is provided for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .hdgraph import ConventionalAdjacency, HDAdjacency, to_parameters
from .nn import Module, PointwiseConv, fan_in_uniform
from .tensor import Parameter, Tensor


@dataclass
class HDGCConfig:
    """Switches for the HD-GC block (graph variants A-D)."""
    c_in: int
    c_out: int
    knn_k: int = 5
    use_fc_edges: bool = True
    use_s_edgeconv: bool = True

    @property
    def c_reduced(self) -> int:
        return self.c_out // 4

    @property
    def variant(self) -> str:
        return "fc" if self.use_fc_edges else "pc"

    def validate(self, num_joints: int) -> None:
        if self.c_out % 4 != 0:
            raise ConfigError(f"c_out must be divisible by 4, got {self.c_out}")
        if not 1 <= self.knn_k < num_joints:
            raise ConfigError(f"knn_k must be in [1, V), got {self.knn_k} with V={num_joints}")


def knn_indices(points: np.ndarray, k: int, include_self: bool = True) -> np.ndarray:
    """Nearest neighbors by Euclidean distance in feature space.

    ``points`` is (N, C, V); returns (N, V, k+1) with the self index
    first when ``include_self``. Distance ties break toward the lower
    node index (stable sort); selection carries no gradient.
    """
    N, C, V = points.shape
    if k >= V:
        raise ConfigError(f"k-NN needs k < V, got k={k}, V={V}")
    x = points.transpose(0, 2, 1)  # (N, V, C)
    sq = np.sum(x * x, axis=2)
    d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * np.matmul(x, x.transpose(0, 2, 1))
    idx_self = np.arange(V)
    d2[:, idx_self, idx_self] = np.inf
    order = np.argsort(d2, axis=2, kind="stable")[:, :, :k]
    if include_self:
        self_col = np.broadcast_to(idx_self[None, :, None], (N, V, 1))
        order = np.concatenate([self_col, order], axis=2)
    return order


def edge_conv(x: Tensor, idx: np.ndarray, weight: Parameter) -> Tensor:
    """EdgeConv: map [x_i ; x_j - x_i] per neighbor edge and max-aggregate.

    ``x`` is (N, C, V), ``idx`` (N, V, K) neighbor indices (constants),
    ``weight`` (C_out, 2C). Returns (N, C_out, V).
    """
    N, C, V = x.shape
    xj = T.gather_nodes(x, idx)                       # (N, C, V, K)
    xi = T.reshape(x, (N, C, V, 1)) + Tensor(np.zeros_like(xj.data))
    feats = T.concat([xi, xj - xi], axis=1)           # (N, 2C, V, K)
    mapped = T.pointwise_conv(feats, weight)          # (N, C_out, V, K)
    return T.reduce(mapped, axis=-1, mode="max")      # (N, C_out, V)


class HDGCLayer(Module):
    """Hierarchically decomposed graph convolution over stacked layers."""

    def __init__(self, config: HDGCConfig, adjacency: HDAdjacency,
                 rng: np.random.Generator, dtype=np.float32):
        if not adjacency.normalized:
            raise ConfigError("HDGCLayer needs a normalized adjacency")
        config.validate(adjacency.num_joints)
        if adjacency.variant != config.variant:
            raise ConfigError(
                f"adjacency variant {adjacency.variant!r} does not match config {config.variant!r}")
        self.config = config
        self.n_l = adjacency.n_l
        self.num_joints = adjacency.num_joints
        cp = config.c_reduced
        self.phi = PointwiseConv(config.c_in, cp, rng, dtype)
        self.adj = to_parameters(adjacency, dtype=dtype)
        self.theta = [[Parameter(fan_in_uniform(rng, (cp, cp), cp, dtype),
                                 name=f"theta.l{k}.s{s}")
                       for s in range(3)] for k in range(self.n_l)]
        self.edge_weights = [Parameter(fan_in_uniform(rng, (cp, 2 * cp), 2 * cp, dtype),
                                       name=f"w_edge.l{k}")
                             for k in range(self.n_l)]

    # -- branch operations ----------------------------------------------
    def forward_subset(self, x: Tensor, k: int, reduced: Optional[Tensor] = None) -> Tensor:
        """Subset-wise graph convolution for layer ``k``: channels concat
        over {identity, centripetal, centrifugal} -> (N, 3C', T, V)."""
        if not 0 <= k < self.n_l:
            raise ConfigError(f"layer index {k} outside [0, {self.n_l})")
        if reduced is None:
            reduced = self.phi(x)
        outs = []
        for s in range(3):
            A = self.adj[k][s]
            agg = T.matmul(reduced, T.transpose(A, (1, 0)))  # aggregate neighbors
            outs.append(T.pointwise_conv(agg, self.theta[k][s]))
        return T.concat(outs, axis=-3)

    def s_edgeconv(self, x: Tensor, k: int, reduced: Optional[Tensor] = None) -> Tensor:
        """Spatial EdgeConv for layer ``k`` on temporally pooled features:
        returns (N, C', V), broadcast over frames by the caller."""
        if reduced is None:
            reduced = self.phi(x)
        pooled = reduced.mean(axis=-2)                         # (N, C', V)
        idx = knn_indices(pooled.data, self.config.knn_k)      # selection is constant
        return edge_conv(pooled, idx, self.edge_weights[k])

    def forward(self, x: Tensor) -> Tensor:
        """Full block: (N, C_in, T, V) -> per-hierarchy stack (N, C_out, N_L, T, V)."""
        if x.ndim != 4 or x.shape[1] != self.config.c_in or x.shape[3] != self.num_joints:
            raise ShapeError(
                f"expected (N, {self.config.c_in}, T, {self.num_joints}), got {x.shape}")
        N, _, frames, V = x.shape
        cp = self.config.c_reduced
        reduced = self.phi(x)
        per_layer = []
        for k in range(self.n_l):
            subsets = self.forward_subset(x, k, reduced=reduced)
            if self.config.use_s_edgeconv:
                se = self.s_edgeconv(x, k, reduced=reduced)
                se = T.reshape(se, (N, cp, 1, V)) + Tensor(
                    np.zeros((N, cp, frames, V), dtype=x.dtype))
            else:
                # variant contract: disabled branch zero-fills its block
                se = Tensor(np.zeros((N, cp, frames, V), dtype=x.dtype))
            full = T.concat([subsets, se], axis=1)             # (N, C_out, T, V)
            per_layer.append(T.reshape(full, (N, self.config.c_out, 1, frames, V)))
        return T.concat(per_layer, axis=2)

    __call__ = forward


class ConventionalGCLayer(Module):
    """Single-layer baseline: summed subset-wise convolutions over the
    physical-edge adjacency (no hierarchy decomposition)."""

    def __init__(self, c_in: int, c_out: int, adjacency: ConventionalAdjacency,
                 rng: np.random.Generator, dtype=np.float32):
        if not adjacency.normalized:
            raise ConfigError("ConventionalGCLayer needs a normalized adjacency")
        self.c_in = c_in
        self.c_out = c_out
        self.num_joints = adjacency.num_joints
        self.adj = to_parameters(adjacency, dtype=dtype)[0]
        self.theta = [PointwiseConv(c_in, c_out, rng, dtype) for _ in range(3)]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in or x.shape[3] != self.num_joints:
            raise ShapeError(f"expected (N, {self.c_in}, T, {self.num_joints}), got {x.shape}")
        out = None
        for s in range(3):
            agg = T.matmul(x, T.transpose(self.adj[s], (1, 0)))
            term = self.theta[s](agg)
            out = term if out is None else out + term
        return out

    __call__ = forward
