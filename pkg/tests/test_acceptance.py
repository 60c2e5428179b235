"""Acceptance suite: eleven end-to-end criteria, one pass/fail line each.

Each test prints ``[ACCEPTANCE nn] <name>: PASS|FAIL`` (captured output
is echoed in the run summary via the ``-rP`` report option). The
training-based criteria (07-09) run the full optimization loops and
dominate the suite's runtime.
"""

import time

import numpy as np
import pytest

from hdgcn.aha import AHAConfig, AHAModule, layer_mask, rsap
from hdgcn.data import (DatasetManifest, SkeletonSequence, derive_bone,
                        generate_synthetic, load_arrays, read_sequence,
                        write_sequence)
from hdgcn.ensemble import fuse
from hdgcn.gradsuite import GRAD_TOL, run_suite
from hdgcn.hdgraph import (S_CF, S_CP, S_ID, build_conventional, build_hd,
                           decompose, hd_edge_union, normalize)
from hdgcn.network import HDGCN, ModelConfig, PRESETS, complexity
from hdgcn.tensor import Tensor
from hdgcn.topology import SkeletonTopology, builtin
from hdgcn.training import TrainConfig, evaluate_model, lr_at, train

NTU = builtin("ntu25")


def _report(idx: int, name: str, ok: bool, detail: str = "") -> None:
    suffix = f"  ({detail})" if detail else ""
    line = f"[ACCEPTANCE {idx:02d}] {name}: {'PASS' if ok else 'FAIL'}{suffix}"
    print(line)
    assert ok, line


# -- shared toy dataset -------------------------------------------------------

@pytest.fixture(scope="module")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptds")
    generate_synthetic(root, num_classes=8, train_per_class=100,
                       test_per_class=25, seed=0, frames=48)
    train_m = DatasetManifest.load(root / "train_manifest.json")
    test_m = DatasetManifest.load(root / "test_manifest.json")
    cache = {}

    def arrays(split, stream="joint", com="belly"):
        key = (split, stream, com)
        if key not in cache:
            m = train_m if split == "train" else test_m
            cache[key] = load_arrays(m, stream=stream, com=com, window=16)
        return cache[key]

    return arrays


def _toy_model(seed=0, com="belly", **kw):
    base = dict(topology="ntu25", com=com, num_classes=8, window=16,
                channels=(16, 16, 32), strides=(1, 1, 2), seed=seed)
    base.update(kw)
    return HDGCN(ModelConfig(**base))


def _train_best_top1(model, arrays, seed, com="belly", stream="joint",
                     epochs=30, target=None):
    """Best eval-set top-1 reached within the epoch budget."""
    cfg = TrainConfig(epochs=epochs, warmup_epochs=5, batch_size=32, seed=seed)
    state, _ = train(model, arrays("train", stream, com), cfg,
                     eval_xy=arrays("test", stream, com), target_top1=target)
    return state.best_metric


# -- criteria -----------------------------------------------------------------

def test_criterion_01_hierarchy_golden():
    expected = (
        (2,),
        (1, 21),
        (3, 5, 9, 13, 17),
        (4, 6, 10, 14, 18),
        (7, 11, 15, 19),
        (8, 12, 16, 20),
        (22, 23, 24, 25),
    )
    got = decompose(NTU, "belly").sets
    _report(1, "hierarchy decomposition golden (ntu25, belly CoM)",
            got == expected, f"{len(got)} sets")


def test_criterion_02_conventional_graph_golden():
    expected_edges = {
        (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
        (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14),
        (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8),
        (24, 25), (25, 12),
    }
    adj = build_conventional(NTU).tensor
    got = {(int(r) + 1, int(c) + 1) for r, c in zip(*np.nonzero(adj[S_CP]))}
    ok = (got == expected_edges
          and np.array_equal(adj[S_ID], np.eye(25))
          and np.array_equal(adj[S_CF], adj[S_CP].T))
    _report(2, "conventional graph golden (24 inward edges + identity)",
            ok, f"{len(got)} edges")


def test_criterion_03_pc_union_equals_physical_edges():
    decomp = decompose(NTU, "chest")
    union = hd_edge_union(build_hd(decomp, "pc", topology=NTU), S_CP)
    ok = union == set(NTU.pc_edges)
    _report(3, "PC variant centripetal union equals inward edge set",
            ok, f"{len(union)}/24 edges")


def test_criterion_04_normalization_oracle():
    def dense(A):
        deg = np.maximum((A != 0).sum(axis=0), 1).astype(float)
        D = np.diag(1.0 / np.sqrt(deg))
        return D @ A @ D

    rng = np.random.default_rng(42)
    worst = 0.0
    for trial in range(50):
        V = int(rng.integers(2, 11))
        edges = tuple((j, int(rng.integers(1, j))) for j in range(2, V + 1))
        topo = SkeletonTopology(f"r{trial}", V, edges)
        com = int(rng.integers(1, V + 1))
        for raw in (build_hd(decompose(topo, com), "fc"),
                    build_hd(decompose(topo, com), "pc", topology=topo),
                    build_conventional(topo)):
            normed = normalize(raw).tensor
            stacked = raw.tensor if raw.tensor.ndim == 4 else raw.tensor[None]
            out = normed if normed.ndim == 4 else normed[None]
            for k in range(stacked.shape[0]):
                for s in range(3):
                    worst = max(worst, float(np.max(np.abs(
                        out[k, s] - dense(stacked[k, s])))))
    _report(4, "symmetric normalization matches dense oracle over 50 random graphs",
            worst <= 1e-12, f"max abs err {worst:.2e}")


def test_criterion_05_gradient_suite():
    start = time.time()
    results = run_suite("all", seed=0)
    elapsed = time.time() - start
    worst_name, worst = max(results, key=lambda kv: kv[1])
    ok = worst <= GRAD_TOL and elapsed < 300.0
    _report(5, "gradient suite (ops + layers + composed micro-model)",
            ok, f"worst {worst_name} rel_err {worst:.2e}, {elapsed:.0f}s")


def test_criterion_06_complexity_bands():
    report = complexity(PRESETS["ntu120-joint"])
    p_dev = (report.param_count - 1.68e6) / 1.68e6
    f_dev = (report.flop_count - 1.60e9) / 1.60e9
    ok = abs(p_dev) <= 0.10 and abs(f_dev) <= 0.15
    _report(6, "complexity bands (params +-10% of 1.68M, FLOPs +-15% of 1.60G)",
            ok, f"params {report.param_count:,} ({p_dev:+.1%}), "
                f"flops {report.flop_count / 1e9:.3f}G ({f_dev:+.1%})")


def test_criterion_07_toy_training(toy_dataset):
    hits = []
    for seed in (0, 1, 2):
        best = _train_best_top1(_toy_model(seed=seed), toy_dataset, seed,
                                target=0.95)
        hits.append(best >= 0.95)
    ok = sum(hits) >= 2
    _report(7, "toy training reaches >=95% test top-1 within 30 epochs (>=2/3 seeds)",
            ok, f"hits {sum(hits)}/3")


def _chain_ok(values, tol=0.005):
    drops = [a - b for a, b in zip(values, values[1:]) if a - b > 1e-12]
    return len(drops) == 0 or (len(drops) == 1 and drops[0] <= tol + 1e-9)


ABLATIONS = {
    "conventional": dict(conventional_graph=True),
    "hd-pc": dict(use_fc_edges=False, use_s_edgeconv=False),
    "hd-fc": dict(use_fc_edges=True, use_s_edgeconv=False),
    "full": dict(use_fc_edges=True, use_s_edgeconv=True),  # rsap + h-EdgeConv
    "aha-none": dict(aha_mode="none", use_h_edgeconv=False),
    "aha-sap": dict(aha_mode="sap", use_h_edgeconv=False),
    "aha-rsap": dict(aha_mode="rsap", use_h_edgeconv=False),
}


def test_criterion_08_ablation_chains(toy_dataset):
    means = {}
    for tag, kw in ABLATIONS.items():
        accs = [
            _train_best_top1(_toy_model(seed=seed, **kw), toy_dataset, seed)
            for seed in (0, 1, 2)
        ]
        means[tag] = float(np.mean(accs))
    graph_chain = [means["conventional"], means["hd-pc"], means["hd-fc"],
                   means["full"]]
    aha_chain = [means["aha-none"], means["aha-sap"], means["aha-rsap"],
                 means["full"]]
    ok = _chain_ok(graph_chain) and _chain_ok(aha_chain)
    detail = ("graph " + "/".join(f"{v:.3f}" for v in graph_chain)
              + "; aha " + "/".join(f"{v:.3f}" for v in aha_chain))
    _report(8, "ablation chains monotone (<=1 adjacent inversion of <=0.5pt)",
            ok, detail)


def test_criterion_09_ensemble_beats_best_member(toy_dataset):
    members = [(s, c) for s in ("joint", "bone")
               for c in ("belly", "chest", "hip")]
    wins = 0
    details = []
    for seed in range(5):
        member_top1, probs = [], []
        for stream, com in members:
            model = _toy_model(seed=seed, com=com, channels=(16, 16),
                               strides=(1, 2))
            _train_best_top1(model, toy_dataset, seed, com=com, stream=stream,
                             target=1.0)
            x, y = toy_dataset("test", stream, com)
            top1, _, logits = evaluate_model(model, x, y, 64)
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            probs.append(p / p.sum(axis=1, keepdims=True))
            member_top1.append(top1)
        fused = fuse(probs)
        _, y = toy_dataset("test", "joint", "belly")
        ens = float((np.argmax(fused, axis=1) == y).mean())
        win = ens >= max(member_top1) - 1e-12
        wins += win
        details.append(f"s{seed}:{ens:.3f}>={max(member_top1):.3f}")
    ok = wins >= 3
    _report(9, "six-member ensemble top-1 >= best member (majority of 5 seeds)",
            ok, f"{wins}/5 wins; " + " ".join(details))


def test_criterion_10_invariants(toy_dataset, tmp_path):
    failures = []
    rng = np.random.default_rng(0)
    decomp = decompose(NTU, "belly")

    # attention strictly inside (0, 1)
    model = _toy_model()
    x, _ = toy_dataset("test")
    model(x[:8], training=False)
    for att in model.attention_maps():
        if att is None or not (np.all(att > 0.0) and np.all(att < 1.0)):
            failures.append("attention-range")
            break

    # aha mode "none" is bitwise the plain hierarchy sum
    stack = Tensor(rng.normal(size=(2, 8, decomp.n_l, 4, 25)).astype(np.float32))
    none_mod = AHAModule(8, decomp.n_l, decomp, AHAConfig(mode="none"), rng)
    if not np.array_equal(none_mod(stack).data, stack.data.sum(axis=2)):
        failures.append("aha-none-bitwise")

    # RSAP masking: joints outside a layer's sets never affect its pooled value
    arr = rng.normal(size=(1, 4, decomp.n_l, 5, 25))
    base = rsap(Tensor(arr.copy()), decomp).data
    mask, _ = layer_mask(decomp)
    for k in range(decomp.n_l):
        poked = arr.copy()
        poked[:, :, k, :, np.nonzero(mask[k] == 0)[0]] += 50.0
        if not np.array_equal(rsap(Tensor(poked), decomp).data[:, :, k],
                              base[:, :, k]):
            failures.append("rsap-masking")
            break

    # bone stream is translation invariant (up to float32 cancellation)
    joint = SkeletonSequence(
        "ntu25", rng.normal(size=(1, 3, 10, 25)).astype(np.float32), 0, "joint")
    shifted = SkeletonSequence("ntu25", joint.data + np.float32(3.25), 0, "joint")
    if not np.allclose(derive_bone(joint, NTU, "belly").data,
                       derive_bone(shifted, NTU, "belly").data, atol=2e-6):
        failures.append("bone-translation")

    # file round trips are bit-exact (HDS binary and JSON mirror)
    for suffix in (".hds", ".json"):
        p = tmp_path / f"seq{suffix}"
        write_sequence(p, joint)
        if read_sequence(p).data.tobytes() != joint.data.tobytes():
            failures.append(f"roundtrip{suffix}")

    # same-seed training runs are bit-identical
    xtr, ytr = toy_dataset("train")
    cfg = TrainConfig(epochs=1, warmup_epochs=0, batch_size=32, seed=0)
    pair = []
    for _ in range(2):
        m = _toy_model(channels=(8,), strides=(1,))
        train(m, (xtr[:64], ytr[:64]), cfg)
        pair.append(b"".join(p.data.tobytes() for _, p in m.named_parameters()))
    if pair[0] != pair[1]:
        failures.append("seed-determinism")

    _report(10, "invariant suites (attention/none-sum/rsap-mask/bone/io/determinism)",
            not failures, "all six" if not failures else ",".join(failures))


def test_criterion_11_lr_schedule_golden():
    cfg = TrainConfig()
    lr5 = lr_at(5, cfg)
    lr89 = lr_at(89, cfg)
    ok = lr5 == pytest.approx(0.1) and abs(lr89 - 0.0001) <= 1e-6
    _report(11, "learning-rate goldens (epoch 5 -> 0.1, epoch 89 -> 0.0001)",
            ok, f"lr(5)={lr5:.6f}, lr(89)={lr89:.6f}")
