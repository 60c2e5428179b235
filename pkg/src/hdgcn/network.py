"""Full network assembly: stacked spatial-temporal blocks, classifier,
checkpointing and complexity counters.

Each block runs the graph convolution stack plus hierarchy aggregation
(spatial), then a four-branch multiscale temporal module, with a
residual connection (pointwise projection when channels or frame count
change). The default plan is nine blocks with channel widths
64,64,64,128,128,128,256,256,256, frame-halving at the channel-doubling
blocks, global average pooling and a linear classifier.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import tensor as T
from .aha import AHAConfig, AHAModule
from .checkpoint import read_tensors, write_tensors
from .errors import ConfigError, DataError, ShapeError
from .hdgc import ConventionalGCLayer, HDGCConfig, HDGCLayer
from .hdgraph import build_conventional, build_hd, decompose, normalize
from .nn import BatchNorm, Linear, Module, PointwiseConv, TemporalConv
from .tensor import Tensor
from .topology import SkeletonTopology, builtin

DEFAULT_CHANNELS = (64, 64, 64, 128, 128, 128, 256, 256, 256)
DEFAULT_STRIDES = (1, 1, 1, 2, 1, 1, 2, 1, 1)


@dataclass
class ModelConfig:
    """Everything needed to rebuild a model deterministically."""
    topology: str = "ntu25"
    com: str = "belly"
    num_classes: int = 60
    window: int = 64
    channels: tuple = DEFAULT_CHANNELS
    strides: tuple = DEFAULT_STRIDES
    in_channels: int = 3
    knn_k: int = 5
    use_fc_edges: bool = True
    use_s_edgeconv: bool = True
    conventional_graph: bool = False
    aha_mode: str = "rsap"
    use_h_edgeconv: bool = True
    h_knn_k: int = 2
    attention_per_channel: bool = True
    use_batch_norm: bool = True
    input_norm: bool = True
    degree_scope: str = "subset"
    flip_direction: bool = False
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.strides = tuple(self.strides)
        if len(self.channels) != len(self.strides):
            raise ConfigError(
                f"{len(self.channels)} channel widths but {len(self.strides)} strides")
        if any(c % 4 for c in self.channels):
            raise ConfigError(f"all channel widths must be divisible by 4: {self.channels}")
        if any(s not in (1, 2) for s in self.strides):
            raise ConfigError(f"strides must be 1 or 2: {self.strides}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["strides"] = list(self.strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class ComplexityReport:
    """Deterministic parameter and FLOP counts for a configuration."""
    param_count: int
    mac_count: int
    flop_count: int
    frames: int
    num_joints: int
    num_classes: int
    convention: str

    def to_dict(self) -> dict:
        return asdict(self)


COUNTING_CONVENTION = (
    "FLOPs = 2 x multiply-accumulates of dense linear maps (pointwise and "
    "temporal convolutions at their executed frame counts, adjacency "
    "applications as dense VxV products, EdgeConv edge maps, attention "
    "transforms, hierarchy-axis weighted sum, residual projections, "
    "classifier); batch norm, activations, pooling means/maxes and k-NN "
    "distance computations are excluded; counts are per person sequence of "
    "the given window."
)


class TemporalModule(Module):
    """Four-branch multiscale temporal unit at constant width.

    Branches (each after a pointwise reduction to C/4): kernel-5
    convolutions with dilation 1 and 2, a pointwise pass-through, and
    kernel-3 max pooling. Stride is applied inside each branch.
    """

    def __init__(self, channels: int, stride: int, rng: np.random.Generator,
                 use_batch_norm: bool = True, dtype=np.float32):
        if channels % 4 != 0:
            raise ConfigError(f"temporal module needs channels divisible by 4, got {channels}")
        if stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {stride}")
        c4 = channels // 4
        self.stride = stride
        self.use_batch_norm = use_batch_norm
        self.reduce = [PointwiseConv(channels, c4, rng, dtype) for _ in range(4)]
        self.conv1 = TemporalConv(c4, c4, kernel=5, rng=rng, dilation=1, stride=stride, dtype=dtype)
        self.conv2 = TemporalConv(c4, c4, kernel=5, rng=rng, dilation=2, stride=stride, dtype=dtype)
        if use_batch_norm:
            self.reduce_bn = [BatchNorm(c4, dtype) for _ in range(4)]
            self.branch_bn = [BatchNorm(c4, dtype) for _ in range(4)]

    def _reduced(self, x: Tensor, i: int, training: bool) -> Tensor:
        r = self.reduce[i](x)
        if self.use_batch_norm:
            r = self.reduce_bn[i](r, training)
        return T.relu(r)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        branches = [
            self.conv1(self._reduced(x, 0, training)),
            self.conv2(self._reduced(x, 1, training)),
            T.slice_axis(self._reduced(x, 2, training), axis=-2, start=0, step=self.stride),
            T.max_pool_time(self._reduced(x, 3, training), kernel=3, stride=self.stride),
        ]
        if self.use_batch_norm:
            branches = [bn(b, training) for bn, b in zip(self.branch_bn, branches)]
        return T.concat(branches, axis=-3)

    __call__ = forward


class STBlock(Module):
    """One spatial-temporal block with a residual connection."""

    def __init__(self, c_in: int, c_out: int, stride: int, cfg: ModelConfig,
                 adjacency, decomp, rng: np.random.Generator, dtype=np.float32):
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.use_batch_norm = cfg.use_batch_norm
        if cfg.conventional_graph:
            self.spatial = ConventionalGCLayer(c_in, c_out, adjacency, rng, dtype)
            self.aha = None
        else:
            gc_cfg = HDGCConfig(c_in=c_in, c_out=c_out, knn_k=cfg.knn_k,
                                use_fc_edges=cfg.use_fc_edges,
                                use_s_edgeconv=cfg.use_s_edgeconv)
            self.spatial = HDGCLayer(gc_cfg, adjacency, rng, dtype)
            self.aha = AHAModule(c_out, adjacency.n_l, decomp,
                                 AHAConfig(mode=cfg.aha_mode,
                                           use_h_edgeconv=cfg.use_h_edgeconv,
                                           h_knn_k=cfg.h_knn_k,
                                           per_channel=cfg.attention_per_channel),
                                 rng, dtype)
        if cfg.use_batch_norm:
            self.spatial_bn = BatchNorm(c_out, dtype)
        self.temporal = TemporalModule(c_out, stride, rng, cfg.use_batch_norm, dtype)
        self.project = None
        if c_in != c_out or stride != 1:
            self.project = PointwiseConv(c_in, c_out, rng, dtype)
            if cfg.use_batch_norm:
                self.project_bn = BatchNorm(c_out, dtype)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        s = self.spatial(x)
        if self.aha is not None:
            s = self.aha(s)
        if self.use_batch_norm:
            s = self.spatial_bn(s, training)
        s = T.relu(s)
        t = self.temporal(s, training)
        if self.project is None:
            res = x
        else:
            res = T.slice_axis(x, axis=-2, start=0, step=self.stride)
            res = self.project(res)
            if self.use_batch_norm:
                res = self.project_bn(res, training)
        return T.relu(t + res)

    __call__ = forward


class HDGCN(Module):
    """The full classifier network."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(config.seed)
        self.topology: SkeletonTopology = builtin(config.topology)
        self.decomp = decompose(self.topology, config.com)
        if config.conventional_graph:
            adjacency = normalize(build_conventional(self.topology), config.degree_scope)
        else:
            adjacency = normalize(
                build_hd(self.decomp, "fc" if config.use_fc_edges else "pc",
                         topology=self.topology, flip_direction=config.flip_direction),
                config.degree_scope)
        self.adjacency = adjacency
        if config.input_norm:
            self.input_bn = BatchNorm(config.in_channels, dtype)
        self.blocks: List[STBlock] = []
        c_prev = config.in_channels
        for c, s in zip(config.channels, config.strides):
            self.blocks.append(STBlock(c_prev, c, s, config, adjacency, self.decomp, rng, dtype))
            c_prev = c
        self.classifier = Linear(c_prev, config.num_classes, rng, dtype)

    # -- forward ----------------------------------------------------------
    def forward(self, x, training: bool = False) -> Tensor:
        """(N, M, C, T, V) or (N, C, T, V) batch -> (N, num_classes) logits.

        Multi-person sequences fold the person axis into the batch;
        per-person logits average back per sample.
        """
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        persons = None
        if x.ndim == 5:
            N, M = x.shape[0], x.shape[1]
            persons = M
            x = T.reshape(x, (N * M,) + x.shape[2:])
        elif x.ndim != 4:
            raise ShapeError(f"expected (N, M, C, T, V) or (N, C, T, V), got {x.shape}")
        if x.shape[1] != self.config.in_channels:
            raise DataError(f"expected {self.config.in_channels} coordinate channels, got {x.shape[1]}")
        if x.shape[3] != self.topology.num_joints:
            raise DataError(
                f"joint count {x.shape[3]} does not match topology {self.topology.name} "
                f"(V={self.topology.num_joints})")
        if self.config.input_norm:
            x = self.input_bn(x, training)
        for block in self.blocks:
            x = block(x, training)
        pooled = x.mean(axis=(-2, -1))  # global average over frames and joints
        logits = self.classifier(pooled)
        if persons is not None:
            logits = T.reshape(logits, (logits.shape[0] // persons, persons, -1)).mean(axis=1)
        return logits

    __call__ = forward

    def predict_proba(self, x) -> np.ndarray:
        with T.no_grad():
            logits = self.forward(x, training=False)
        return T.softmax(logits.data, axis=1)

    def attention_maps(self) -> List[Optional[np.ndarray]]:
        """Per-block attention maps from the most recent forward pass."""
        return [b.aha.last_attention if b.aha is not None else None for b in self.blocks]

    # -- checkpointing ------------------------------------------------------
    def save(self, path) -> None:
        path = Path(path)
        write_tensors(path, self.state_dict())
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(self.config.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path, dtype=np.float32) -> "HDGCN":
        path = Path(path)
        sidecar = path.with_suffix(path.suffix + ".json")
        if not sidecar.exists():
            raise DataError(f"missing config sidecar {sidecar}")
        meta = json.loads(sidecar.read_text())
        # training checkpoints nest the model config under "model_config"
        config = ModelConfig.from_dict(meta.get("model_config", meta))
        model = cls(config, dtype=dtype)
        state = {k: v for k, v in read_tensors(path).items()
                 if not k.startswith("opt.")}
        model.load_state_dict(state)
        return model


# ---------------------------------------------------------------------------
# complexity
# ---------------------------------------------------------------------------

def _block_macs(cfg: ModelConfig, c_in: int, c_out: int, stride: int,
                t_in: int, V: int, n_l: int) -> int:
    t_out = -(-t_in // stride)
    if cfg.conventional_graph:
        spatial = 3 * (V * V * c_in * t_in + c_in * c_out * t_in * V)
    else:
        cp = c_out // 4
        spatial = cp * c_in * t_in * V                       # shared reduction
        spatial += 3 * n_l * (V * V * cp * t_in + cp * cp * t_in * V)
        if cfg.use_s_edgeconv:
            spatial += n_l * V * (cfg.knn_k + 1) * (cp * 2 * cp)
        if cfg.aha_mode != "none":
            c_att = c_out if cfg.attention_per_channel else 1
            if cfg.use_h_edgeconv:
                spatial += n_l * (cfg.h_knn_k + 1) * (c_att * 2 * c_out)
            else:
                spatial += n_l * c_att * c_out
        spatial += c_out * n_l * t_in * V                    # hierarchy weighted sum
    c4 = c_out // 4
    temporal = 4 * c_out * c4 * t_in * V                     # branch reductions at full T
    temporal += 2 * c4 * c4 * 5 * t_out * V                  # two kernel-5 convolutions
    macs = spatial + temporal
    if c_in != c_out or stride != 1:
        macs += c_in * c_out * t_out * V
    return macs


def complexity(config: ModelConfig, frames: Optional[int] = None,
               model: Optional[HDGCN] = None) -> ComplexityReport:
    """Parameter and FLOP counts for one person sequence of ``frames``.

    Parameters are counted from an instantiated model (exact); MACs are
    walked analytically over the layer graph with the documented
    convention.
    """
    if model is None:
        model = HDGCN(config)
    frames = frames or config.window
    V = model.topology.num_joints
    n_l = model.decomp.n_l
    params = sum(p.size for p in model.parameters())
    macs = 0
    t = frames
    c_prev = config.in_channels
    for c, s in zip(config.channels, config.strides):
        macs += _block_macs(config, c_prev, c, s, t, V, n_l)
        t = -(-t // s)
        c_prev = c
    macs += c_prev * config.num_classes  # classifier
    return ComplexityReport(
        param_count=int(params),
        mac_count=int(macs),
        flop_count=int(2 * macs),
        frames=frames,
        num_joints=V,
        num_classes=config.num_classes,
        convention=COUNTING_CONVENTION,
    )


PRESETS = {
    "ntu120-joint": ModelConfig(topology="ntu25", com="belly", num_classes=120, window=64),
    "ntu60-joint": ModelConfig(topology="ntu25", com="belly", num_classes=60, window=64),
}
