"""SGD training loop: Nesterov momentum, coupled L2 weight decay,
linear warmup into cosine annealing, CSV metrics and exact-resume
checkpoints.

The schedule is per-epoch: the first ``warmup_epochs`` epochs ramp
linearly as lr_max*(epoch+1)/warmup_epochs, then the learning rate
follows lr_min + (lr_max-lr_min)(1+cos(pi*progress))/2 where progress
runs over the remaining epochs. The update is the classic coupled
formulation: g = grad + wd*p; buf = mu*buf + g; p -= lr*(g + mu*buf).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .checkpoint import read_tensors, write_tensors
from .errors import ConfigError, DataError, TrainingError
from .network import HDGCN
from .tensor import Parameter, Tensor


@dataclass
class TrainConfig:
    epochs: int = 90
    warmup_epochs: int = 5
    lr_max: float = 0.1
    lr_min: float = 0.0001
    momentum: float = 0.9
    weight_decay: float = 0.0004
    batch_size: int = 64
    seed: int = 0
    label_smoothing: float = 0.0
    # substrings of parameter names exempt from weight decay
    weight_decay_exclude: tuple = ()

    def __post_init__(self):
        self.weight_decay_exclude = tuple(self.weight_decay_exclude)
        if not self.lr_min < self.lr_max:
            raise ConfigError(f"lr_min must be < lr_max, got {self.lr_min} >= {self.lr_max}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(
                f"warmup_epochs must be in [0, epochs), got {self.warmup_epochs} of {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weight_decay_exclude"] = list(self.weight_decay_exclude)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for a zero-based epoch index under warmup + cosine."""
    if not 0 <= epoch < cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.lr_max * (epoch + 1) / cfg.warmup_epochs
    span = cfg.epochs - 1 - cfg.warmup_epochs
    progress = 0.0 if span == 0 else (epoch - cfg.warmup_epochs) / span
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainState:
    """Optimizer and loop state, fully serializable for exact resume."""
    epoch: int = 0
    step: int = 0
    best_metric: float = float("-inf")
    momentum: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Optional[dict] = None

    def buffer(self, name: str, param: Parameter) -> np.ndarray:
        buf = self.momentum.get(name)
        if buf is None:
            buf = np.zeros_like(param.data)
            self.momentum[name] = buf
        elif buf.shape != param.shape:
            raise TrainingError(
                f"momentum buffer for {name} has shape {buf.shape}, parameter {param.shape}")
        return buf


def sgd_step(named_params: Sequence[Tuple[str, Parameter]], state: TrainState,
             lr: float, cfg: TrainConfig) -> None:
    """One Nesterov SGD update over parameters whose gradients are set."""
    mu = cfg.momentum
    for name, p in named_params:
        if not p.trainable or p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        wd = 0.0 if any(tok in name for tok in cfg.weight_decay_exclude) else cfg.weight_decay
        if wd:
            g = g + wd * p.data
        buf = state.buffer(name, p)
        buf *= mu
        buf += g
        p.data -= (lr * (g + mu * buf)).astype(p.dtype)
    state.step += 1


def _smooth_loss(logits: Tensor, labels: np.ndarray, smoothing: float) -> Tensor:
    if smoothing == 0.0:
        return T.softmax_cross_entropy(logits, labels)
    N, K = logits.shape
    log_p = logits - T.reshape(
        T.log(T.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1, keepdims=True))
        + logits.max(axis=1, keepdims=True), (N, 1))
    target = np.full((N, K), smoothing / K, dtype=logits.dtype)
    target[np.arange(N), labels] += 1.0 - smoothing
    return -(log_p * Tensor(target)).sum(axis=1).mean(axis=0)


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, ks=(1, 5)) -> List[float]:
    """Fraction of rows whose true label is among the k largest scores."""
    order = np.argsort(-logits, axis=1, kind="stable")
    out = []
    for k in ks:
        hits = (order[:, :min(k, logits.shape[1])] == labels[:, None]).any(axis=1)
        out.append(float(hits.mean()))
    return out


def evaluate_model(model: HDGCN, x: np.ndarray, y: np.ndarray,
                   batch_size: int = 64) -> Tuple[float, float, np.ndarray]:
    """Eval-mode top-1/top-5 plus the raw logits."""
    logits = []
    with T.no_grad():
        for i in range(0, len(x), batch_size):
            logits.append(model(x[i:i + batch_size], training=False).data)
    logits = np.concatenate(logits)
    top1, top5 = topk_accuracy(logits, y)
    return top1, top5, logits


# -- checkpoint plumbing ----------------------------------------------------

def _save_checkpoint(path: Path, model: HDGCN, state: TrainState,
                     history: List[dict], rng: np.random.Generator) -> None:
    tensors = dict(model.state_dict())
    for name, buf in state.momentum.items():
        tensors["opt." + name] = buf
    write_tensors(path, tensors)
    meta = {
        "epoch": state.epoch, "step": state.step, "best_metric": state.best_metric,
        "rng_state": rng.bit_generator.state, "history": history,
        "model_config": model.config.to_dict(),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta) + "\n")


def load_checkpoint(path, model: HDGCN) -> Tuple[TrainState, List[dict], np.random.Generator]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    tensors = read_tensors(path)
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("opt.")})
    state = TrainState(epoch=meta["epoch"], step=meta["step"], best_metric=meta["best_metric"])
    for k, v in tensors.items():
        if k.startswith("opt."):
            state.momentum[k[4:]] = v.astype(np.float32)
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    state.rng_state = meta["rng_state"]
    return state, meta["history"], rng


def train(model: HDGCN, train_xy: Tuple[np.ndarray, np.ndarray], cfg: TrainConfig,
          out_dir=None, eval_xy: Optional[Tuple[np.ndarray, np.ndarray]] = None,
          resume=None, quiet: bool = True,
          target_top1: Optional[float] = None) -> Tuple[TrainState, List[dict]]:
    """Full optimization loop with seeded shuffling and checkpointing.

    Metrics per epoch: learning rate, mean train loss, and top-1/top-5
    on the eval split when given (otherwise on accumulated train-batch
    predictions). Writes ``last.hdt``/``best.hdt`` plus ``metrics.csv``
    under ``out_dir`` when set. ``resume`` continues bit-exactly from a
    previous last checkpoint. ``target_top1`` stops early once the
    logged accuracy reaches the target.
    """
    x, y = train_xy
    if len(x) == 0:
        raise DataError("training set is empty")
    if len(x) != len(y):
        raise DataError(f"{len(x)} inputs but {len(y)} labels")
    named = list(model.named_parameters())
    if resume is not None:
        state, history, rng = load_checkpoint(resume, model)
    else:
        state, history = TrainState(), []
        rng = np.random.default_rng(cfg.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(state.epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        perm = rng.permutation(len(x))
        losses, batch_hits1, batch_hits5, seen = [], 0, 0, 0
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            logits = model(x[idx], training=True)
            loss = _smooth_loss(logits, y[idx], cfg.label_smoothing)
            model.zero_grad()
            loss.backward()
            sgd_step(named, state, lr, cfg)
            losses.append(float(loss.data))
            t1, t5 = topk_accuracy(logits.data, y[idx])
            batch_hits1 += t1 * len(idx)
            batch_hits5 += t5 * len(idx)
            seen += len(idx)
        if eval_xy is not None:
            top1, top5, _ = evaluate_model(model, eval_xy[0], eval_xy[1], cfg.batch_size)
        else:
            top1, top5 = batch_hits1 / seen, batch_hits5 / seen
        record = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)),
                  "top1": top1, "top5": top5}
        history.append(record)
        if not quiet:
            print(f"epoch {epoch:3d}  lr {lr:.5f}  loss {record['loss']:.4f}  "
                  f"top1 {top1:.4f}  top5 {top5:.4f}")
        state.epoch = epoch + 1
        improved = top1 > state.best_metric
        if improved:
            state.best_metric = top1
        if out_dir is not None:
            _save_checkpoint(out_dir / "last.hdt", model, state, history, rng)
            if improved:
                _save_checkpoint(out_dir / "best.hdt", model, state, history, rng)
            _write_metrics(out_dir / "metrics.csv", history)
        if target_top1 is not None and top1 >= target_top1:
            break
    if out_dir is not None:
        (out_dir / "summary.json").write_text(json.dumps({
            "epochs": state.epoch, "best_top1": state.best_metric,
            "final": history[-1], "config": cfg.to_dict(),
        }, indent=1) + "\n")
    return state, history


def _write_metrics(path: Path, history: List[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "lr", "loss", "top1", "top5"])
        writer.writeheader()
        writer.writerows(history)
