"""Hierarchy decomposition and adjacency tensor assembly.

Given a skeleton topology and a CoM joint, the joints are grouped into
hierarchy node sets by BFS distance over PC edges. From the sets we
build either the conventional one-layer adjacency (identity /
centripetal / centrifugal subsets over the physical edges) or the
hierarchically decomposed adjacency with one layer per pair of
neighboring sets, in PC (physical edges only) or FC (all inter-set
pairs) variants. Normalization is the symmetric degree scaling
D^{-1/2} A D^{-1/2} with column-wise nonzero counts as degrees.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, TopologyError
from .tensor import Parameter
from .topology import SkeletonTopology, bfs_layers, parent_map

SUBSET_NAMES = ("id", "cp", "cf")
S_ID, S_CP, S_CF = 0, 1, 2


@dataclass(frozen=True)
class HierarchyDecomposition:
    """Ordered hierarchy node sets rooted at a CoM joint."""
    com: int
    sets: Tuple[Tuple[int, ...], ...]  # H_1 .. H_{N_H}, joint ids sorted
    num_joints: int

    @property
    def n_h(self) -> int:
        return len(self.sets)

    @property
    def n_l(self) -> int:
        return len(self.sets) - 1

    def __post_init__(self):
        if self.sets[0] != (self.com,):
            raise TopologyError(f"H_1 must be the CoM set, got {self.sets[0]}")
        flat = [j for s in self.sets for j in s]
        if sorted(flat) != list(range(1, self.num_joints + 1)):
            raise TopologyError("hierarchy sets must partition the joints")

    def layer_members(self, k: int) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
        """The (H_k, H_{k+1}) pair for layer index k (0-based)."""
        return self.sets[k], self.sets[k + 1]

    def to_dict(self) -> dict:
        return {"com": self.com, "sets": [list(s) for s in self.sets],
                "n_h": self.n_h, "n_l": self.n_l}


@dataclass(frozen=True)
class HDAdjacency:
    """(N_L, 3, V, V) adjacency tensor over {identity, centripetal, centrifugal}."""
    tensor: np.ndarray
    variant: str  # "pc" | "fc"
    normalized: bool
    decomposition: HierarchyDecomposition

    @property
    def n_l(self) -> int:
        return self.tensor.shape[0]

    @property
    def num_joints(self) -> int:
        return self.tensor.shape[-1]


@dataclass(frozen=True)
class ConventionalAdjacency:
    """(3, V, V) adjacency over the physical edge set, one layer."""
    tensor: np.ndarray
    normalized: bool

    @property
    def num_joints(self) -> int:
        return self.tensor.shape[-1]


def decompose(topology: SkeletonTopology, com) -> HierarchyDecomposition:
    """Group joints into hierarchy sets by BFS distance from ``com``."""
    com_id = topology.com_joint(com)
    layers = bfs_layers(topology, com_id)
    return HierarchyDecomposition(
        com=com_id,
        sets=tuple(tuple(layer) for layer in layers),
        num_joints=topology.num_joints,
    )


def build_hd(decomp: HierarchyDecomposition, variant: str,
             topology: Optional[SkeletonTopology] = None,
             flip_direction: bool = False) -> HDAdjacency:
    """Assemble the unnormalized (N_L, 3, V, V) hierarchy adjacency.

    Entry [i, j] = 1 means node j aggregates into node i. Centripetal
    entries are written at [outer-set node, inner-set node] and
    centrifugal at the transpose, mirroring the construction loop;
    ``flip_direction`` swaps the two subsets for the alternative reading
    of the direction labels. The FC variant connects every inter-set
    pair, the PC variant only pairs that are physical edges
    (``topology`` required). A physical edge whose endpoints share a
    hierarchy set (hand tips and thumbs) joins the layer spanning that
    set, oriented by the physical parent map, so the PC variant always
    covers the whole physical edge set.
    """
    variant = variant.lower()
    if variant not in ("pc", "fc"):
        raise ConfigError(f"HD-Graph variant must be 'pc' or 'fc', got {variant!r}")
    if variant == "pc" and topology is None:
        raise ConfigError("PC variant needs the topology to restrict to physical edges")
    V = decomp.num_joints
    A = np.zeros((decomp.n_l, 3, V, V), dtype=np.float64)
    pc_pairs = set()
    if topology is not None:
        pc_pairs = {frozenset(e) for e in topology.pc_edges}
    for k in range(decomp.n_l):
        inner, outer = decomp.layer_members(k)
        for j in inner + outer:
            A[k, S_ID, j - 1, j - 1] = 1.0
        for i in inner:
            for j in outer:
                if variant == "pc" and frozenset((i, j)) not in pc_pairs:
                    continue
                A[k, S_CP, j - 1, i - 1] = 1.0
                A[k, S_CF, i - 1, j - 1] = 1.0
    if variant == "pc":
        set_of = {j: h for h, s in enumerate(decomp.sets) for j in s}
        parents = parent_map(topology, decomp.com)
        for a, b in topology.pc_edges:
            if set_of[a] != set_of[b]:
                continue  # inter-set edges were placed by the loop above
            child, parent = (a, b) if parents[a] == b else (b, a)
            k = set_of[a] - 1
            A[k, S_CP, child - 1, parent - 1] = 1.0
            A[k, S_CF, parent - 1, child - 1] = 1.0
    if flip_direction:
        A = A[:, [S_ID, S_CF, S_CP]]
    return HDAdjacency(tensor=A, variant=variant, normalized=False, decomposition=decomp)


def build_conventional(topology: SkeletonTopology) -> ConventionalAdjacency:
    """Assemble the unnormalized (3, V, V) physical-edge adjacency."""
    V = topology.num_joints
    A = np.zeros((3, V, V), dtype=np.float64)
    A[S_ID] = np.eye(V)
    for child, parent in topology.pc_edges:
        A[S_CP, child - 1, parent - 1] = 1.0
        A[S_CF, parent - 1, child - 1] = 1.0
    return ConventionalAdjacency(tensor=A, normalized=False)


def _normalize_stack(mats: np.ndarray, degree_scope: str) -> np.ndarray:
    """Symmetrically scale a (3, V, V) stack by column nonzero counts."""
    out = np.empty_like(mats)
    if degree_scope == "pooled":
        deg = np.count_nonzero(mats, axis=(0, 1)).astype(np.float64)
        scale = 1.0 / np.sqrt(np.maximum(deg, 1.0))
        for s in range(mats.shape[0]):
            out[s] = scale[:, None] * mats[s] * scale[None, :]
        return out
    for s in range(mats.shape[0]):
        deg = np.count_nonzero(mats[s], axis=0).astype(np.float64)
        scale = 1.0 / np.sqrt(np.maximum(deg, 1.0))  # zero-degree columns clamp to 1
        out[s] = scale[:, None] * mats[s] * scale[None, :]
    return out


def normalize(adj, degree_scope: str = "subset"):
    """Return a normalized copy: A <- D^{-1/2} A D^{-1/2} per layer.

    ``degree_scope`` is "subset" (each of the 3 matrices normalized by
    its own column degrees) or "pooled" (degrees counted across the 3
    subsets of a layer jointly).
    """
    if degree_scope not in ("subset", "pooled"):
        raise ConfigError(f"degree_scope must be 'subset' or 'pooled', got {degree_scope!r}")
    if adj.normalized:
        raise ConfigError("adjacency is already normalized")
    if isinstance(adj, HDAdjacency):
        out = np.stack([_normalize_stack(adj.tensor[k], degree_scope)
                        for k in range(adj.n_l)])
        return replace(adj, tensor=out, normalized=True)
    if isinstance(adj, ConventionalAdjacency):
        return replace(adj, tensor=_normalize_stack(adj.tensor, degree_scope), normalized=True)
    raise ConfigError(f"cannot normalize {type(adj).__name__}")


def to_parameters(adj, dtype=np.float32, prefix: str = "adj") -> List[List[Parameter]]:
    """One trainable Parameter per (layer, subset) matrix, initialized to
    the normalized adjacency values.

    Conventional adjacency yields a single pseudo-layer.
    """
    if not adj.normalized:
        raise ConfigError("normalize the adjacency before converting to parameters")
    tensor = adj.tensor if isinstance(adj, HDAdjacency) else adj.tensor[None]
    params: List[List[Parameter]] = []
    for k in range(tensor.shape[0]):
        row = [Parameter(tensor[k, s].astype(dtype), name=f"{prefix}.l{k}.{SUBSET_NAMES[s]}")
               for s in range(3)]
        params.append(row)
    return params


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def hd_edge_union(adj: HDAdjacency, subset: int = S_CP) -> set:
    """Union over layers of a subset's nonzero entries as (row+1, col+1) pairs."""
    rows, cols = np.nonzero(adj.tensor[:, subset].sum(axis=0))
    return {(int(r) + 1, int(c) + 1) for r, c in zip(rows, cols)}


def to_dot(decomp: HierarchyDecomposition, adj: HDAdjacency,
           joint_names: Optional[Sequence[str]] = None) -> str:
    """Render hierarchy sets and inter-set edges as a Graphviz digraph."""
    lines = ["digraph hdgraph {", "  rankdir=TB;"]
    for k, members in enumerate(decomp.sets):
        lines.append(f"  subgraph cluster_h{k + 1} {{")
        lines.append(f'    label="H_{k + 1}";')
        for j in members:
            label = joint_names[j - 1] if joint_names else str(j)
            lines.append(f'    n{j} [label="{label}"];')
        lines.append("  }")
    for k in range(adj.n_l):
        rows, cols = np.nonzero(adj.tensor[k, S_CP])
        for r, c in zip(rows, cols):
            lines.append(f"  n{c + 1} -> n{r + 1} [comment=\"layer {k + 1}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"
