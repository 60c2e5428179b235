"""Graph convolution layer: k-NN selection, EdgeConv oracle, variant
contracts and shapes."""

import numpy as np
import pytest

from hdgcn import tensor as T
from hdgcn.errors import ConfigError, ShapeError
from hdgcn.hdgc import (ConventionalGCLayer, HDGCConfig, HDGCLayer, edge_conv,
                        knn_indices)
from hdgcn.hdgraph import build_conventional, build_hd, decompose, normalize
from hdgcn.tensor import Parameter, Tensor
from hdgcn.topology import builtin

TOPO = builtin("ntu25")
DECOMP = decompose(TOPO, "belly")
ADJ = normalize(build_hd(DECOMP, "fc"))


def test_knn_matches_bruteforce():
    # [DERIVED: pairwise distance loop with stable lowest-index tie break]
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(3, 4, 7))
    idx = knn_indices(pts, k=3)
    assert idx.shape == (3, 7, 4)
    for n in range(3):
        for v in range(7):
            d = [(np.sum((pts[n, :, v] - pts[n, :, u]) ** 2), u)
                 for u in range(7) if u != v]
            d.sort()
            assert idx[n, v, 0] == v  # self first
            np.testing.assert_array_equal(idx[n, v, 1:], [u for _, u in d[:3]])


def test_knn_tie_breaks_to_lower_index():
    pts = np.zeros((1, 2, 4))  # all points identical -> all distances tie
    idx = knn_indices(pts, k=2)
    np.testing.assert_array_equal(idx[0, 3], [3, 0, 1])


def test_knn_rejects_k_ge_v():
    with pytest.raises(ConfigError):
        knn_indices(np.zeros((1, 2, 4)), k=4)


def test_edge_conv_matches_bruteforce():
    # [DERIVED: per-edge map of [x_i ; x_j - x_i], max over neighbors]
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 5))
    idx = knn_indices(x, k=2)
    w = rng.normal(size=(4, 6))
    got = edge_conv(Tensor(x), idx, Parameter(w)).data
    for n in range(2):
        for v in range(5):
            feats = []
            for j in idx[n, v]:
                xi, xj = x[n, :, v], x[n, :, j]
                feats.append(w @ np.concatenate([xi, xj - xi]))
            np.testing.assert_allclose(got[n, :, v], np.max(feats, axis=0), atol=1e-12)


def test_hdgc_stack_shape_and_channel_layout():
    rng = np.random.default_rng(2)
    layer = HDGCLayer(HDGCConfig(c_in=3, c_out=16), ADJ, rng)
    x = Tensor(rng.normal(size=(2, 3, 6, 25)).astype(np.float32))
    out = layer(x)
    assert out.shape == (2, 16, DECOMP.n_l, 6, 25)


def test_disabled_s_edgeconv_zero_fills_its_block():
    rng = np.random.default_rng(3)
    layer = HDGCLayer(HDGCConfig(c_in=3, c_out=16, use_s_edgeconv=False), ADJ, rng)
    out = layer(Tensor(rng.normal(size=(1, 3, 4, 25)).astype(np.float32)))
    cp = 16 // 4
    assert np.all(out.data[:, 3 * cp:] == 0.0)
    assert np.any(out.data[:, :3 * cp] != 0.0)


def test_variant_mismatch_and_unnormalized_rejected():
    rng = np.random.default_rng(4)
    pc_adj = normalize(build_hd(DECOMP, "pc", topology=TOPO))
    with pytest.raises(ConfigError, match="variant"):
        HDGCLayer(HDGCConfig(c_in=3, c_out=16, use_fc_edges=True), pc_adj, rng)
    with pytest.raises(ConfigError, match="normalized"):
        HDGCLayer(HDGCConfig(c_in=3, c_out=16), build_hd(DECOMP, "fc"), rng)


def test_conventional_layer_matches_dense_oracle():
    rng = np.random.default_rng(5)
    adj = normalize(build_conventional(TOPO))
    layer = ConventionalGCLayer(3, 8, adj, rng)
    x = rng.normal(size=(2, 3, 4, 25)).astype(np.float32)
    out = layer(Tensor(x)).data
    ref = np.zeros_like(out)
    for s in range(3):
        agg = np.einsum("nctv,wv->nctw", x, adj.tensor[s].astype(np.float32))
        ref += np.einsum("nctv,oc->notv", agg, layer.theta[s].weight.data)
    np.testing.assert_allclose(out, ref, atol=1e-4)


def test_shape_errors_name_expectation():
    rng = np.random.default_rng(6)
    layer = HDGCLayer(HDGCConfig(c_in=3, c_out=16), ADJ, rng)
    with pytest.raises(ShapeError, match="25"):
        layer(Tensor(np.zeros((1, 3, 4, 24), dtype=np.float32)))
