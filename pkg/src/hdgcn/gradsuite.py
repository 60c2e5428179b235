"""Named finite-difference checks over every differentiable op plus the
composed micro-model, shared by the CLI ``gradcheck`` subcommand and
the test suite.

Each case reduces the op output to a scalar through a fixed random
projection so directional errors in the backward pass can't cancel.
Inputs are sampled away from kinks (relu margins, log/sqrt domains).
"""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np

from . import tensor as T
from .aha import AHAConfig, AHAModule, rsap, sap, aggregate
from .gradcheck import DEFAULT_EPS, check_gradients, relative_error
from .hdgc import HDGCConfig, HDGCLayer, ConventionalGCLayer, edge_conv, knn_indices
from .hdgraph import build_conventional, build_hd, decompose, normalize
from .network import HDGCN, ModelConfig
from .nn import BatchNorm
from .tensor import Parameter, Tensor
from .topology import SkeletonTopology

GRAD_TOL = 1e-4

# a 5-joint star-with-tail tree for micro checks
MICRO_TOPOLOGY = SkeletonTopology(
    name="micro5", num_joints=5, pc_edges=((2, 1), (3, 1), (4, 2), (5, 2)),
    com_candidates={"belly": 1, "chest": 2, "hip": 1},
    joint_names=("root", "mid", "arm", "leg", "tip"),
)


def _proj(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _scalar(out: Tensor, proj: Tensor) -> Tensor:
    return (out * proj).sum()


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return x + np.sign(x) * margin


def op_cases(seed: int = 0) -> List[Tuple[str, Callable, List[Tensor]]]:
    """(name, scalar function, leaf tensors) for every differentiable op."""
    rng = np.random.default_rng(seed)

    def leaf(shape, positive=False, margin=0.0):
        x = rng.normal(size=shape)
        if positive:
            x = np.abs(x) + 0.5
        elif margin:
            x = x + np.sign(x) * margin
        return Tensor(x, requires_grad=True, dtype=np.float64)

    cases = []
    p = _proj(rng, (3, 4))
    cases += [
        ("add", lambda x, y: _scalar(x + y, p), [leaf((3, 4)), leaf((1, 4))]),
        ("sub", lambda x, y: _scalar(x - y, p), [leaf((3, 4)), leaf((3, 1))]),
        ("mul", lambda x, y: _scalar(x * y, p), [leaf((3, 4)), leaf((4,))]),
        ("div", lambda x, y: _scalar(x / y, p), [leaf((3, 4)), leaf((3, 4), positive=True)]),
        ("neg", lambda x: _scalar(-x, p), [leaf((3, 4))]),
        ("power", lambda x: _scalar(T.power(x, 3.0), p), [leaf((3, 4))]),
        ("exp", lambda x: _scalar(T.exp(x), p), [leaf((3, 4))]),
        ("log", lambda x: _scalar(T.log(x), p), [leaf((3, 4), positive=True)]),
        ("sqrt", lambda x: _scalar(T.sqrt(x), p), [leaf((3, 4), positive=True)]),
        ("relu", lambda x: _scalar(T.relu(x), p), [leaf((3, 4), margin=0.05)]),
        ("sigmoid", lambda x: _scalar(T.sigmoid(x), p), [leaf((3, 4))]),
    ]
    p2 = _proj(rng, (2, 3, 5))
    cases.append(("matmul", lambda x, y: _scalar(T.matmul(x, y), p2),
                  [leaf((2, 3, 4)), leaf((2, 4, 5))]))
    p_rs, p_tr = _proj(rng, (4, 3)), _proj(rng, (4, 2, 3))
    cases.append(("reshape", lambda x: _scalar(T.reshape(x, (4, 3)), p_rs), [leaf((3, 4))]))
    cases.append(("transpose", lambda x: _scalar(T.transpose(x, (2, 0, 1)), p_tr),
                  [leaf((2, 3, 4))]))
    pc = _proj(rng, (2, 7))
    cases.append(("concat", lambda x, y: _scalar(T.concat([x, y], axis=1), pc),
                  [leaf((2, 3)), leaf((2, 4))]))
    p_sl, p_pd = _proj(rng, (2, 3)), _proj(rng, (2, 7))
    cases.append(("slice", lambda x: _scalar(T.slice_axis(x, axis=1, start=1, stop=7, step=2),
                                             p_sl), [leaf((2, 8))]))
    cases.append(("pad", lambda x: _scalar(T.pad_axis(x, axis=1, before=2, after=1), p_pd),
                  [leaf((2, 4))]))
    ppw = _proj(rng, (2, 5, 3, 4))
    cases.append(("pointwise_conv", lambda x, w: _scalar(T.pointwise_conv(x, w), ppw),
                  [leaf((2, 6, 3, 4)), leaf((5, 6))]))
    pl = _proj(rng, (3, 5))
    cases.append(("linear", lambda x, w, bb: _scalar(T.linear(x, w, bb), pl),
                  [leaf((3, 4)), leaf((5, 4)), leaf((5,))]))
    pr = _proj(rng, (3,))
    for mode in ("mean", "sum"):
        cases.append((f"reduce_{mode}",
                      lambda x, m=mode: _scalar(T.reduce(x, axis=(1, 2), mode=m), pr),
                      [leaf((3, 4, 5))]))
    p_mx = _proj(rng, (3, 4))
    cases.append(("reduce_max", lambda x: _scalar(T.reduce(x, axis=2, mode="max"), p_mx),
                  [leaf((3, 4, 5))]))
    ptc = _proj(rng, (2, 3, 8, 5))
    cases.append(("temporal_conv", lambda x, w: _scalar(
        T.temporal_conv(x, w, kernel=5, dilation=1, stride=1), ptc),
        [leaf((2, 4, 8, 5)), leaf((3, 4, 5))]))
    ptc2 = _proj(rng, (2, 3, 4, 5))
    cases.append(("temporal_conv_s2d2", lambda x, w: _scalar(
        T.temporal_conv(x, w, kernel=5, dilation=2, stride=2), ptc2),
        [leaf((2, 4, 8, 5)), leaf((3, 4, 5))]))
    pmp = _proj(rng, (2, 3, 4, 5))
    cases.append(("max_pool_time", lambda x: _scalar(T.max_pool_time(x, kernel=3, stride=2), pmp),
                  [leaf((2, 3, 8, 5))]))
    idx = np.stack([np.stack([rng.permutation(6)[:3] for _ in range(6)]) for _ in range(2)])
    pg = _proj(rng, (2, 4, 6, 3))
    cases.append(("gather_nodes", lambda x: _scalar(T.gather_nodes(x, idx), pg),
                  [leaf((2, 4, 6))]))
    labels = rng.integers(0, 5, size=6)
    cases.append(("softmax_cross_entropy",
                  lambda x: T.softmax_cross_entropy(x, labels), [leaf((6, 5))]))
    cases.append(("softmax_cross_entropy_smoothed",
                  lambda x: _smoothed_ce(x, labels, 0.1), [leaf((6, 5))]))
    return cases


def _smoothed_ce(logits, labels, smoothing):
    from .training import _smooth_loss
    return _smooth_loss(logits, labels, smoothing)


def layer_cases(seed: int = 0) -> List[Tuple[str, Callable, List[Tensor]]]:
    """Composite layers: batch norm, EdgeConv, HD-GC, A-HA, conventional GC."""
    rng = np.random.default_rng(seed + 1)
    topo = MICRO_TOPOLOGY
    decomp = decompose(topo, "belly")
    hd = normalize(build_hd(decomp, "fc", topology=topo))
    conv = normalize(build_conventional(topo))
    cases = []

    bn = BatchNorm(3, dtype=np.float64)
    pbn = _proj(rng, (4, 3, 5, 6))
    cases.append(("batch_norm", lambda x: _scalar(bn(x, True), pbn),
                  [Tensor(rng.normal(size=(4, 3, 5, 6)), requires_grad=True, dtype=np.float64)]))

    x_ec = rng.normal(size=(2, 3, 5))
    idx = knn_indices(x_ec, 2)
    pec = _proj(rng, (2, 4, 5))
    cases.append(("edge_conv", lambda x, w: _scalar(edge_conv(x, idx, w), pec),
                  [Tensor(x_ec, requires_grad=True, dtype=np.float64),
                   Tensor(rng.normal(size=(4, 6)), requires_grad=True, dtype=np.float64)]))

    gc = HDGCLayer(HDGCConfig(c_in=3, c_out=8, knn_k=2), hd, rng, dtype=np.float64)
    pgc = _proj(rng, (2, 8, hd.n_l, 4, 5))
    x_gc = Tensor(rng.normal(size=(2, 3, 4, 5)), requires_grad=True, dtype=np.float64)
    gc_leaves = [Tensor(p.data.copy(), requires_grad=True, dtype=np.float64)
                 for p in gc.parameters()]
    cases.append(("hdgc_layer", _bind_module(gc, pgc), [x_gc] + gc_leaves))

    aha = AHAModule(8, hd.n_l, decomp, AHAConfig(mode="rsap", h_knn_k=1), rng, dtype=np.float64)
    paha = _proj(rng, (2, 8, 4, 5))
    x_aha = Tensor(rng.normal(size=(2, 8, hd.n_l, 4, 5)), requires_grad=True, dtype=np.float64)
    aha_leaves = [Tensor(p.data.copy(), requires_grad=True, dtype=np.float64)
                  for p in aha.parameters()]
    cases.append(("aha_module", _bind_module(aha, paha), [x_aha] + aha_leaves))

    cg = ConventionalGCLayer(3, 6, conv, rng, dtype=np.float64)
    pcg = _proj(rng, (2, 6, 4, 5))
    x_cg = Tensor(rng.normal(size=(2, 3, 4, 5)), requires_grad=True, dtype=np.float64)
    cg_leaves = [Tensor(p.data.copy(), requires_grad=True, dtype=np.float64)
                 for p in cg.parameters()]
    cases.append(("conventional_gc", _bind_module(cg, pcg), [x_cg] + cg_leaves))

    prs = _proj(rng, (2, 3, decomp.n_l))
    x_rs = Tensor(rng.normal(size=(2, 3, decomp.n_l, 4, 5)), requires_grad=True, dtype=np.float64)
    cases.append(("rsap", lambda x: _scalar(rsap(x, decomp), prs), [x_rs]))
    cases.append(("sap", lambda x: _scalar(sap(x), prs),
                  [Tensor(rng.normal(size=(2, 3, decomp.n_l, 4, 5)), requires_grad=True,
                          dtype=np.float64)]))
    pagg = _proj(rng, (2, 3, 4, 5))
    cases.append(("aggregate", lambda s, a: _scalar(aggregate(s, T.sigmoid(a)), pagg),
                  [Tensor(rng.normal(size=(2, 3, decomp.n_l, 4, 5)), requires_grad=True,
                          dtype=np.float64),
                   Tensor(rng.normal(size=(2, 3, decomp.n_l)), requires_grad=True,
                          dtype=np.float64)]))
    return cases


def _bind_module(module, proj):
    """Wrap a module so its live parameters mirror the supplied leaves."""
    live = module.parameters()

    def f(x, *leaves):
        for dst, src in zip(live, leaves):
            dst.data = np.array(src.data, dtype=np.float64)
            dst.grad = None
        out = module(x) if not isinstance(module, BatchNorm) else module(x, True)
        scalar = _scalar(out, proj)
        # re-route: analytic grads land on live params; copy them to leaves
        return _Reattach(scalar, live, leaves)

    return f


class _Reattach(Tensor):
    """Scalar wrapper that mirrors module-parameter gradients onto the
    externally supplied leaf tensors after backward()."""

    def __init__(self, inner: Tensor, live, leaves):
        super().__init__(inner.data, requires_grad=False, dtype=inner.data.dtype)
        self._inner = inner
        self._live = live
        self._leaves = leaves

    def backward(self, grad=None):
        self._inner.backward(grad)
        for dst, src in zip(self._leaves, self._live):
            if dst.requires_grad:
                dst.grad = None if src.grad is None else src.grad.copy()


def model_case(seed: int = 0):
    """The composed micro-model: V=5, T=8, two blocks, full loss."""
    cfg = ModelConfig(topology="micro5", com="belly", num_classes=3, window=8,
                      channels=(8, 8), strides=(1, 2), knn_k=2, h_knn_k=1,
                      seed=seed)
    model = _build_micro(cfg)
    rng = np.random.default_rng(seed + 7)
    x = rng.normal(size=(2, 3, 8, 5))
    y = rng.integers(0, 3, size=2)
    return model, x, y


def _build_micro(cfg: ModelConfig) -> HDGCN:
    with tempfile.TemporaryDirectory() as td:
        path = Path(td) / "micro5.json"
        MICRO_TOPOLOGY.save(path)
        cfg2 = ModelConfig(**{**cfg.to_dict(), "topology": f"custom:{path}"})
        return HDGCN(cfg2, dtype=np.float64)


def check_model(seed: int = 0, eps: float = DEFAULT_EPS,
                max_entries_per_param: int = 0) -> Dict[str, float]:
    """Finite-difference check of every model parameter against the
    analytic gradient of the training loss. Returns name -> rel error.

    ``max_entries_per_param`` > 0 subsamples entries for speed.
    """
    model, x, y = model_case(seed)
    # jitter to a generic point: freshly initialized models have exact
    # zeros (adjacency rows, biases) that park relu inputs on the kink,
    # where finite differences are meaningless
    jitter = np.random.default_rng(seed + 13)
    for _, p in model.named_parameters():
        p.data += jitter.uniform(-0.02, 0.02, size=p.shape)

    def loss_value():
        with T.no_grad():
            logits = model(x, training=False)
        return float(T.softmax_cross_entropy(Tensor(logits.data), y).data)

    # analytic pass (eval-mode statistics so FD and analytic agree:
    # training-mode BN mutates running stats, eval mode is pure)
    model.zero_grad()
    logits = model(x, training=False)
    loss = T.softmax_cross_entropy(logits, y)
    loss.backward()

    errors: Dict[str, float] = {}
    rng = np.random.default_rng(seed)
    for name, p in model.named_parameters():
        flat = p.data.reshape(-1)
        n = flat.size
        sel = np.arange(n)
        if max_entries_per_param and n > max_entries_per_param:
            sel = rng.choice(n, size=max_entries_per_param, replace=False)
        numeric = np.zeros(sel.size)
        for j, i in enumerate(sel):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_value()
            flat[i] = orig - eps
            lo = loss_value()
            flat[i] = orig
            numeric[j] = (hi - lo) / (2 * eps)
        analytic = (p.grad.reshape(-1)[sel] if p.grad is not None
                    else np.zeros(sel.size))
        err = relative_error(analytic, numeric)
        if err > GRAD_TOL / 2:
            # a relu/max kink inside the +-eps interval corrupts the
            # difference quotient; shrinking the step resolves a true
            # kink crossing but not a wrong analytic gradient
            small = eps / 100.0
            for j, i in enumerate(sel):
                orig = flat[i]
                flat[i] = orig + small
                hi = loss_value()
                flat[i] = orig - small
                lo = loss_value()
                flat[i] = orig
                numeric[j] = (hi - lo) / (2 * small)
            err = min(err, relative_error(analytic, numeric))
        errors[name] = err
    return errors


def run_suite(module: str = "all", seed: int = 0,
              model_entries: int = 12) -> List[Tuple[str, float]]:
    """Run the requested check group; returns (name, worst rel error)."""
    results: List[Tuple[str, float]] = []
    if module in ("ops", "all"):
        for name, f, tensors in op_cases(seed):
            results.append((f"op.{name}", check_gradients(f, tensors)))
    if module in ("layers", "all"):
        for name, f, tensors in layer_cases(seed):
            results.append((f"layer.{name}", check_gradients(f, tensors)))
    if module in ("model", "all"):
        errors = check_model(seed, max_entries_per_param=model_entries)
        worst = max(errors.items(), key=lambda kv: kv[1])
        results.append((f"model.micro[worst={worst[0]}]", worst[1]))
    if not results:
        raise ValueError(f"unknown gradcheck module {module!r} "
                         "(choose ops, layers, model, all)")
    return results
