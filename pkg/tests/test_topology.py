"""Topology registry: validation, BFS layering, parent orientation,
relabeling, serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdgcn.errors import TopologyError
from hdgcn.topology import (SkeletonTopology, bfs_layers, builtin,
                            extend_kinetics, parent_map)


def test_ntu25_builtin_shape():
    topo = builtin("ntu25")
    assert topo.num_joints == 25
    assert len(topo.pc_edges) == 24
    assert topo.com_candidates == {"belly": 2, "chest": 21, "hip": 1}
    assert topo.joint_names[20] == "spine_shoulder"


def test_rejects_cycle_and_disconnection():
    with pytest.raises(TopologyError, match="duplicate|disconnected"):
        SkeletonTopology("bad", 4, ((2, 1), (3, 2), (2, 3)))
    with pytest.raises(TopologyError, match="needs exactly"):
        SkeletonTopology("bad", 4, ((2, 1), (3, 2)))
    with pytest.raises(TopologyError, match="self-loop"):
        SkeletonTopology("bad", 3, ((2, 2), (3, 1)))
    with pytest.raises(TopologyError, match="outside"):
        SkeletonTopology("bad", 3, ((2, 1), (4, 1)))


def test_com_resolution():
    topo = builtin("ntu25")
    assert topo.com_joint("belly") == 2
    assert topo.com_joint(7) == 7
    with pytest.raises(TopologyError):
        topo.com_joint("elbow")
    with pytest.raises(TopologyError):
        topo.com_joint(26)


def test_parent_map_orients_away_from_root():
    topo = SkeletonTopology("chain", 4, ((2, 1), (3, 2), (4, 3)))
    assert parent_map(topo, 3) == {3: 3, 2: 3, 4: 3, 1: 2}


def test_bfs_layers_partition_and_ordering():
    topo = builtin("ntu25")
    layers = bfs_layers(topo, 2)
    flat = sorted(j for layer in layers for j in layer)
    assert flat == list(range(1, 26))
    assert layers[0] == [2]


def test_hierarchy_edges_merge_hand_tips():
    # tips and thumbs share the hands' child set instead of chaining
    layers = bfs_layers(builtin("ntu25"), 2)
    assert len(layers) == 7
    assert layers[6] == [22, 23, 24, 25]


def test_relabel_roundtrip():
    topo = builtin("ntu25")
    perm = {j: (j % 25) + 1 for j in range(1, 26)}
    inv = {v: k for k, v in perm.items()}
    back = topo.relabel(perm).relabel(inv)
    assert set(map(frozenset, back.pc_edges)) == set(map(frozenset, topo.pc_edges))
    assert back.com_candidates == topo.com_candidates
    assert back.joint_names == topo.joint_names


def test_serialization_roundtrip(tmp_path):
    topo = builtin("ntu25")
    path = tmp_path / "t.json"
    topo.save(path)
    loaded = SkeletonTopology.load(path)
    assert loaded == topo
    assert builtin(f"custom:{path}") == topo


def test_kinetics_extension_synthesizes_com_joints():
    base = builtin("kinetics18")
    ext = extend_kinetics(base)
    assert ext.num_joints == 20
    assert ext.com_candidates == {"chest": 2, "hip": 19, "belly": 20}
    assert len(ext.synthetic_rules) == 2
    assert builtin("kinetics20") == ext


def test_unknown_topology_raises():
    with pytest.raises(TopologyError, match="unknown topology"):
        builtin("coco17")


@st.composite
def random_trees(draw):
    n = draw(st.integers(min_value=2, max_value=12))
    # random attachment: joint j+1 attaches to a uniform earlier joint
    edges = tuple((j, draw(st.integers(min_value=1, max_value=j - 1)))
                  for j in range(2, n + 1))
    return SkeletonTopology(f"rand{n}", n, edges)


@settings(max_examples=40, deadline=None)
@given(random_trees(), st.data())
def test_bfs_distance_matches_parent_chain(topo, data):
    """Oracle: BFS layer index equals the length of the parent chain."""
    com = data.draw(st.integers(min_value=1, max_value=topo.num_joints))
    layers = bfs_layers(topo, com)
    parents = parent_map(topo, com)
    for depth, layer in enumerate(layers):
        for j in layer:
            hops, node = 0, j
            while node != com:
                node = parents[node]
                hops += 1
            assert hops == depth
