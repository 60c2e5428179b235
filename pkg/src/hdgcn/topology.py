"""Skeleton topology registry and validation.

A topology is the joint set of a skeleton plus its physically-connected
(PC) inward edge list, which must form a tree, and the candidate
center-of-mass (CoM) joints used to root hierarchy decompositions.
Joint ids are 1-based throughout the public API.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import TopologyError

COM_ROLES = ("chest", "belly", "hip")


@dataclass(frozen=True)
class SyntheticJointRule:
    """A joint synthesized as the midpoint of two source joints."""
    new_joint: int
    source: Tuple[int, int]
    rule: str = "midpoint"

    def __post_init__(self):
        if self.source[0] == self.source[1]:
            raise TopologyError(f"synthetic joint {self.new_joint}: source pair must differ")
        if self.rule != "midpoint":
            raise TopologyError(f"unknown synthetic rule {self.rule!r}")


@dataclass(frozen=True)
class SkeletonTopology:
    """Named joint set with inward PC edges and CoM candidates."""
    name: str
    num_joints: int
    pc_edges: Tuple[Tuple[int, int], ...]  # (child, parent), inward
    com_candidates: Dict[str, int] = field(default_factory=dict)
    joint_names: Optional[Tuple[str, ...]] = None
    synthetic_rules: Tuple[SyntheticJointRule, ...] = ()
    # optional decomposition-only edge list (semantic hierarchy); defaults
    # to the physical edges when absent
    hierarchy_edges: Optional[Tuple[Tuple[int, int], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "pc_edges", tuple(tuple(e) for e in self.pc_edges))
        if self.hierarchy_edges is not None:
            object.__setattr__(self, "hierarchy_edges",
                               tuple(tuple(e) for e in self.hierarchy_edges))
        self.validate()

    def validate(self) -> None:
        V = self.num_joints
        if V < 1:
            raise TopologyError(f"{self.name}: num_joints must be positive, got {V}")
        self._validate_tree(self.pc_edges, "PC")
        if self.hierarchy_edges is not None:
            self._validate_tree(self.hierarchy_edges, "hierarchy")
        for role, j in self.com_candidates.items():
            if not 1 <= j <= V:
                raise TopologyError(f"{self.name}: CoM candidate {role}={j} is not a valid joint")
        if self.joint_names is not None and len(self.joint_names) != V:
            raise TopologyError(f"{self.name}: expected {V} joint names, got {len(self.joint_names)}")

    def _validate_tree(self, edges, label: str) -> None:
        V = self.num_joints
        if len(edges) != V - 1:
            raise TopologyError(
                f"{self.name}: {label} tree needs exactly {V - 1} edges, got {len(edges)}")
        seen = set()
        for child, parent in edges:
            for j in (child, parent):
                if not 1 <= j <= V:
                    raise TopologyError(f"{self.name}: joint id {j} outside [1, {V}]")
            key = frozenset((child, parent))
            if len(key) == 1:
                raise TopologyError(f"{self.name}: self-loop at joint {child}")
            if key in seen:
                raise TopologyError(f"{self.name}: duplicate edge {child}-{parent}")
            seen.add(key)
        # V-1 distinct undirected edges + connectivity => acyclic tree
        if V > 1:
            adj = self.adjacency(edges)
            reached = {1}
            queue = deque([1])
            while queue:
                u = queue.popleft()
                for w in adj[u]:
                    if w not in reached:
                        reached.add(w)
                        queue.append(w)
            if len(reached) != V:
                missing = sorted(set(range(1, V + 1)) - reached)
                raise TopologyError(
                    f"{self.name}: {label} graph disconnected, unreachable joints {missing}")

    def adjacency(self, edges=None) -> Dict[int, List[int]]:
        """Undirected adjacency over PC edges, neighbor lists sorted."""
        adj: Dict[int, List[int]] = {j: [] for j in range(1, self.num_joints + 1)}
        for child, parent in (self.pc_edges if edges is None else edges):
            adj[child].append(parent)
            adj[parent].append(child)
        for lst in adj.values():
            lst.sort()
        return adj

    def com_joint(self, role_or_id) -> int:
        """Resolve a CoM role name or explicit joint id to a joint id."""
        if isinstance(role_or_id, str):
            if role_or_id not in self.com_candidates:
                raise TopologyError(
                    f"{self.name}: no CoM candidate {role_or_id!r} (have {sorted(self.com_candidates)})")
            return self.com_candidates[role_or_id]
        j = int(role_or_id)
        if not 1 <= j <= self.num_joints:
            raise TopologyError(f"{self.name}: joint id {j} outside [1, {self.num_joints}]")
        return j

    def relabel(self, perm: Dict[int, int], name: Optional[str] = None) -> "SkeletonTopology":
        """Apply a joint permutation (old id -> new id)."""
        if sorted(perm) != list(range(1, self.num_joints + 1)) or \
                sorted(perm.values()) != list(range(1, self.num_joints + 1)):
            raise TopologyError("relabel requires a permutation of [1, V]")
        names = None
        if self.joint_names is not None:
            names = [""] * self.num_joints
            for old, new in perm.items():
                names[new - 1] = self.joint_names[old - 1]
            names = tuple(names)
        return SkeletonTopology(
            name=name or f"{self.name}-relabeled",
            num_joints=self.num_joints,
            pc_edges=tuple((perm[c], perm[p]) for c, p in self.pc_edges),
            com_candidates={r: perm[j] for r, j in self.com_candidates.items()},
            joint_names=names,
            synthetic_rules=tuple(
                SyntheticJointRule(perm[r.new_joint],
                                   (perm[r.source[0]], perm[r.source[1]]), r.rule)
                for r in self.synthetic_rules),
            hierarchy_edges=None if self.hierarchy_edges is None else tuple(
                (perm[c], perm[p]) for c, p in self.hierarchy_edges),
        )

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "num_joints": self.num_joints,
            "edges": [list(e) for e in self.pc_edges],
            "com_candidates": dict(self.com_candidates),
        }
        if self.joint_names is not None:
            out["joint_names"] = list(self.joint_names)
        if self.synthetic_rules:
            out["synthetic_rules"] = [
                {"new_joint": r.new_joint, "source": list(r.source), "rule": r.rule}
                for r in self.synthetic_rules
            ]
        if self.hierarchy_edges is not None:
            out["hierarchy_edges"] = [list(e) for e in self.hierarchy_edges]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonTopology":
        try:
            rules = tuple(
                SyntheticJointRule(r["new_joint"], tuple(r["source"]), r.get("rule", "midpoint"))
                for r in d.get("synthetic_rules", ())
            )
            return cls(
                name=d["name"],
                num_joints=int(d["num_joints"]),
                pc_edges=tuple(tuple(e) for e in d["edges"]),
                com_candidates={k: int(v) for k, v in d.get("com_candidates", {}).items()},
                joint_names=tuple(d["joint_names"]) if "joint_names" in d else None,
                synthetic_rules=rules,
                hierarchy_edges=tuple(tuple(e) for e in d["hierarchy_edges"])
                if "hierarchy_edges" in d else None,
            )
        except KeyError as exc:
            raise TopologyError(f"topology file missing key {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SkeletonTopology":
        return cls.from_dict(json.loads(Path(path).read_text()))


def parent_map(topology: SkeletonTopology, com: int) -> Dict[int, int]:
    """Orient the PC tree away from ``com``; the CoM maps to itself."""
    com = topology.com_joint(com)
    adj = topology.adjacency()
    parents = {com: com}
    queue = deque([com])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in parents:
                parents[w] = u
                queue.append(w)
    return parents


def bfs_layers(topology: SkeletonTopology, com: int) -> List[List[int]]:
    """Joints grouped by BFS distance from ``com``.

    Distances run over the hierarchy edge list when the topology defines
    one (semantic grouping, e.g. hand tips sharing the thumbs' set),
    otherwise over the physical edges.
    """
    com = topology.com_joint(com)
    adj = topology.adjacency(topology.hierarchy_edges)
    dist = {com: 0}
    queue = deque([com])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    layers: List[List[int]] = [[] for _ in range(max(dist.values()) + 1)]
    for j in range(1, topology.num_joints + 1):
        layers[dist[j]].append(j)
    return layers


# ---------------------------------------------------------------------------
# builtins
# ---------------------------------------------------------------------------

_NTU25_EDGES = (
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
    (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14),
    (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8),
    (24, 25), (25, 12),
)

# hierarchy distances treat hand tips as siblings of the thumbs (one
# "fingers" set per hand) instead of chaining tip -> thumb -> hand
_NTU25_HIERARCHY_EDGES = tuple(
    {(22, 23): (22, 8), (24, 25): (24, 12)}.get(e, e) for e in _NTU25_EDGES
)

_NTU25_NAMES = (
    "spine_base", "spine_mid", "neck", "head",
    "shoulder_left", "elbow_left", "wrist_left", "hand_left",
    "shoulder_right", "elbow_right", "wrist_right", "hand_right",
    "hip_left", "knee_left", "ankle_left", "foot_left",
    "hip_right", "knee_right", "ankle_right", "foot_right",
    "spine_shoulder", "handtip_left", "thumb_left", "handtip_right", "thumb_right",
)

_KINETICS18_EDGES = (
    (1, 2), (3, 2), (4, 3), (5, 4), (6, 2), (7, 6), (8, 7), (9, 2),
    (10, 9), (11, 10), (12, 2), (13, 12), (14, 13), (15, 1), (16, 1),
    (17, 15), (18, 16),
)

_KINETICS18_NAMES = (
    "nose", "neck", "shoulder_right", "elbow_right", "wrist_right",
    "shoulder_left", "elbow_left", "wrist_left", "hip_right", "knee_right",
    "ankle_right", "hip_left", "knee_left", "ankle_left", "eye_right",
    "eye_left", "ear_right", "ear_left",
)

_KINETICS_LEFT_HIP = 12
_KINETICS_RIGHT_HIP = 9
_KINETICS_CHEST = 2


def extend_kinetics(base: SkeletonTopology) -> SkeletonTopology:
    """Synthesize hip and belly CoM joints for the 18-joint pose skeleton.

    The hip joint is the midpoint of the left and right hips, and the
    belly joint the midpoint of chest and synthesized hip. The hips'
    direct edges to the chest are replaced by the chain
    hip_left/hip_right -> hip -> belly -> chest so the result stays a tree.
    """
    if base.num_joints != 18:
        raise TopologyError(f"extend_kinetics expects the 18-joint pose skeleton, got V={base.num_joints}")
    hip = base.num_joints + 1      # 19
    belly = base.num_joints + 2    # 20
    edges = [e for e in base.pc_edges
             if e not in ((_KINETICS_LEFT_HIP, _KINETICS_CHEST), (_KINETICS_RIGHT_HIP, _KINETICS_CHEST))]
    edges += [(_KINETICS_LEFT_HIP, hip), (_KINETICS_RIGHT_HIP, hip), (hip, belly), (belly, _KINETICS_CHEST)]
    names = None
    if base.joint_names is not None:
        names = base.joint_names + ("hip_center", "belly")
    return SkeletonTopology(
        name=f"{base.name}-20" if not base.name.endswith("20") else base.name,
        num_joints=20,
        pc_edges=tuple(edges),
        com_candidates={"chest": _KINETICS_CHEST, "hip": hip, "belly": belly},
        joint_names=names,
        synthetic_rules=(
            SyntheticJointRule(hip, (_KINETICS_LEFT_HIP, _KINETICS_RIGHT_HIP)),
            SyntheticJointRule(belly, (_KINETICS_CHEST, hip)),
        ),
    )


def builtin(name: str) -> SkeletonTopology:
    """Return a registered topology, or load ``custom:<path>`` from JSON."""
    if name == "ntu25":
        return SkeletonTopology(
            name="ntu25", num_joints=25, pc_edges=_NTU25_EDGES,
            com_candidates={"belly": 2, "chest": 21, "hip": 1},
            joint_names=_NTU25_NAMES,
            hierarchy_edges=_NTU25_HIERARCHY_EDGES,
        )
    if name == "kinetics18":
        return SkeletonTopology(
            name="kinetics18", num_joints=18, pc_edges=_KINETICS18_EDGES,
            com_candidates={"chest": _KINETICS_CHEST},
            joint_names=_KINETICS18_NAMES,
        )
    if name == "kinetics20":
        return extend_kinetics(builtin("kinetics18"))
    if name.startswith("custom:"):
        return SkeletonTopology.load(name.split(":", 1)[1])
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        return SkeletonTopology.load(path)
    raise TopologyError(f"unknown topology {name!r} (builtins: ntu25, kinetics18, kinetics20, custom:<file>)")
