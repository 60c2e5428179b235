"""Score fusion semantics and end-to-end ensemble evaluation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdgcn.data import DatasetManifest, generate_synthetic, load_arrays
from hdgcn.ensemble import (EnsembleMember, EnsembleSpec, evaluate, fuse,
                            predictions)
from hdgcn.errors import ConfigError, ShapeError
from hdgcn.network import HDGCN, ModelConfig
from hdgcn.training import TrainConfig, train


def test_fuse_weighted_sum_oracle():
    a = np.array([[0.2, 0.8], [0.5, 0.5]])
    b = np.array([[0.9, 0.1], [0.4, 0.6]])
    np.testing.assert_allclose(fuse([a, b], [1.0, 3.0]), a + 3.0 * b, atol=1e-15)
    np.testing.assert_allclose(fuse([a, b]), a + b, atol=1e-15)


def test_fuse_shape_and_emptiness_guards():
    a = np.zeros((2, 3))
    with pytest.raises(ConfigError):
        fuse([])
    with pytest.raises(ShapeError):
        fuse([a, np.zeros((2, 4))])
    with pytest.raises(ShapeError):
        fuse([a], [1.0, 2.0])


def test_predictions_tie_break_lowest_index():
    fused = np.array([[0.5, 0.5, 0.0], [0.1, 0.2, 0.2]])
    np.testing.assert_array_equal(predictions(fused), [0, 1])


def test_spec_weight_validation_and_roundtrip(tmp_path):
    with pytest.raises(ConfigError):
        EnsembleSpec(members=[])
    with pytest.raises(ConfigError):
        EnsembleSpec(members=[EnsembleMember("a.hdt", weight=-1.0)])
    with pytest.raises(ConfigError):
        EnsembleSpec(members=[EnsembleMember("a.hdt", weight=0.0)])
    spec = EnsembleSpec(members=[EnsembleMember("a.hdt", "bone", "chest", 2.0),
                                 EnsembleMember("b.hdt")])
    path = tmp_path / "spec.json"
    spec.save(path)
    loaded = EnsembleSpec.load(path)
    assert loaded.members[0].stream == "bone" and loaded.members[0].weight == 2.0


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.01, max_value=100.0), st.integers(min_value=0, max_value=9))
def test_uniform_weight_scaling_never_changes_predictions(scale, seed):
    rng = np.random.default_rng(seed)
    scores = [rng.dirichlet(np.ones(5), size=8) for _ in range(3)]
    base = predictions(fuse(scores, [1.0, 2.0, 0.5]))
    scaled = predictions(fuse(scores, [scale, 2.0 * scale, 0.5 * scale]))
    np.testing.assert_array_equal(base, scaled)


def test_member_order_does_not_change_fused_predictions():
    rng = np.random.default_rng(1)
    scores = [rng.dirichlet(np.ones(4), size=6) for _ in range(3)]
    weights = [1.0, 0.5, 2.0]
    fwd = fuse(scores, weights)
    rev = fuse(scores[::-1], weights[::-1])
    np.testing.assert_allclose(fwd, rev, atol=1e-12)


@pytest.fixture(scope="module")
def trained_members(tmp_path_factory):
    root = tmp_path_factory.mktemp("ens")
    generate_synthetic(root / "ds", num_classes=2, train_per_class=10,
                       test_per_class=4, seed=0, frames=12)
    train_m = DatasetManifest.load(root / "ds" / "train_manifest.json")
    test_m = DatasetManifest.load(root / "ds" / "test_manifest.json")
    paths = []
    for stream in ("joint", "bone"):
        x, y = load_arrays(train_m, stream=stream, com="belly", window=8)
        mc = ModelConfig(topology="ntu25", com="belly", num_classes=2, window=8,
                         channels=(8,), strides=(1,), knn_k=2, h_knn_k=2, seed=0)
        model = HDGCN(mc)
        train(model, (x, y), TrainConfig(epochs=3, warmup_epochs=1, lr_max=0.05,
                                         batch_size=8, seed=0))
        path = root / f"{stream}.hdt"
        model.save(path)
        paths.append((path, stream))
    return test_m, paths


def test_evaluate_end_to_end(trained_members):
    test_m, paths = trained_members
    spec = EnsembleSpec(members=[EnsembleMember(str(p), stream=s, com="belly")
                                 for p, s in paths])
    report = evaluate(spec, test_m, window=8)
    assert 0.0 <= report.top1 <= 1.0
    assert report.confusion.sum() == len(test_m.samples)
    assert len(report.per_member) == 2
    assert set(report.per_class) == set(test_m.classes)
    d = report.to_dict()
    assert isinstance(d["confusion"], list)


def test_single_member_ensemble_equals_member(trained_members):
    test_m, paths = trained_members
    spec = EnsembleSpec(members=[EnsembleMember(str(paths[0][0]), stream="joint")])
    report = evaluate(spec, test_m, window=8)
    assert report.top1 == pytest.approx(report.per_member[0]["top1"])
