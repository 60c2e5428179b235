"""Semantics of the autodiff core: op values against brute-force
oracles, gradient accumulation, and error paths."""

import numpy as np
import pytest

from hdgcn import tensor as T
from hdgcn.errors import ConfigError, DataError, ShapeError
from hdgcn.tensor import Parameter, Tensor, no_grad


def test_add_broadcast_backward_unbroadcasts():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones((1, 4)), requires_grad=True)
    (a + b).sum().backward()
    assert a.grad.shape == (3, 4)
    assert b.grad.shape == (1, 4)
    np.testing.assert_array_equal(b.grad, np.full((1, 4), 3.0))


def test_reuse_accumulates_gradient():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1 = 5
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [5.0])


def test_no_grad_builds_no_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert y._parents == ()


def test_matmul_shape_error_names_both_shapes():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 5)))
    with pytest.raises(ShapeError, match=r"2, 3.*4, 5"):
        T.matmul(a, b)


def test_reduce_max_routes_to_first_argmax_on_tie():
    x = Tensor(np.array([[1.0, 3.0, 3.0]]), requires_grad=True)
    T.reduce(x, axis=1, mode="max").sum().backward()
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_reduce_rejects_multi_axis_max_and_empty_axis():
    x = Tensor(np.ones((2, 3)))
    with pytest.raises(ConfigError):
        T.reduce(x, axis=(0, 1), mode="max")
    with pytest.raises(ShapeError):
        T.reduce(Tensor(np.ones((2, 0))), axis=1, mode="mean")


def test_temporal_conv_matches_bruteforce_oracle():
    # [DERIVED: brute-force dilated convolution loop]
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 9, 4))
    w = rng.normal(size=(5, 3, 3))
    kernel, dilation, stride = 3, 2, 2
    out = T.temporal_conv(Tensor(x), Tensor(w), kernel, dilation, stride)
    pad = dilation * (kernel - 1) // 2
    xp = np.zeros((2, 3, 9 + 2 * pad, 4))
    xp[:, :, pad:pad + 9] = x
    t_out = -(-9 // stride)
    ref = np.zeros((2, 5, t_out, 4))
    for n in range(2):
        for co in range(5):
            for t in range(t_out):
                for v in range(4):
                    acc = 0.0
                    for ci in range(3):
                        for k in range(kernel):
                            acc += w[co, ci, k] * xp[n, ci, t * stride + k * dilation, v]
                    ref[n, co, t, v] = acc
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


def test_temporal_conv_output_length_is_ceil():
    x = Tensor(np.zeros((1, 2, 7, 3)))
    w = Tensor(np.zeros((2, 2, 5)))
    assert T.temporal_conv(x, w, kernel=5, stride=2).shape[2] == 4


def test_max_pool_time_matches_bruteforce():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 8, 3))
    out = T.max_pool_time(Tensor(x), kernel=3, stride=2)
    pad = 1
    xp = np.full((1, 2, 10, 3), -np.inf)
    xp[:, :, 1:9] = x
    ref = np.stack([xp[:, :, s:s + 3].max(axis=2) for s in range(0, 8, 2)], axis=2)
    np.testing.assert_array_equal(out.data, ref)


def test_softmax_cross_entropy_matches_manual():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(4, 6))
    labels = np.array([0, 5, 2, 2])
    loss = T.softmax_cross_entropy(Tensor(logits), labels)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    ref = -np.mean(np.log(p[np.arange(4), labels]))
    np.testing.assert_allclose(float(loss.data), ref, rtol=1e-12)


def test_softmax_cross_entropy_rejects_bad_labels():
    with pytest.raises(DataError):
        T.softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_softmax_cross_entropy_is_stable_for_huge_logits():
    logits = Tensor(np.array([[1000.0, 0.0], [0.0, 1000.0]]))
    loss = T.softmax_cross_entropy(logits, np.array([0, 1]))
    assert np.isfinite(loss.data)
    np.testing.assert_allclose(float(loss.data), 0.0, atol=1e-12)


def test_gather_nodes_forward_and_backward():
    x = Tensor(np.arange(12, dtype=float).reshape(1, 2, 6), requires_grad=True)
    idx = np.array([[[0, 1], [1, 1], [5, 0], [2, 3], [4, 4], [3, 2]]])
    out = T.gather_nodes(x, idx)
    assert out.shape == (1, 2, 6, 2)
    np.testing.assert_array_equal(out.data[0, 0, 1], [1.0, 1.0])
    out.sum().backward()
    # joint 1 is referenced three times, joint 5 once
    np.testing.assert_array_equal(x.grad[0, 0], [2.0, 3.0, 2.0, 2.0, 2.0, 1.0])


def test_parameter_zero_grad_and_repr():
    p = Parameter(np.ones(2), name="w")
    (p * 3.0).sum().backward()
    assert p.grad is not None
    np.testing.assert_array_equal(p.grad, [3.0, 3.0])
    p.zero_grad()
    np.testing.assert_array_equal(p.grad, [0.0, 0.0])
    assert "w" in repr(p)


def test_concat_backward_splits_by_size():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    out = T.concat([a, b], axis=1)
    (out * Tensor(np.arange(10.0).reshape(2, 5))).sum().backward()
    np.testing.assert_array_equal(a.grad, [[0, 1], [5, 6]])
    np.testing.assert_array_equal(b.grad, [[2, 3, 4], [7, 8, 9]])


def test_backward_seed_defaults_to_ones_and_checks_shape():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = x * 2.0
    with pytest.raises(ShapeError):
        y.backward(np.ones(3))
    y.backward()  # implicit all-ones seed
    np.testing.assert_array_equal(x.grad, np.full((2, 2), 2.0))
