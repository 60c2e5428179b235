"""Multi-stream, multi-CoM score fusion and evaluation reports.

Members are frozen checkpoints tagged with an input stream and a CoM
role. Fusion is a weighted sum of per-member softmax probabilities;
prediction is the argmax with lowest-index tie breaking, so uniform
positive rescaling of the weights never changes predictions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import DatasetManifest, load_arrays
from .errors import ConfigError, DataError, ShapeError
from .network import HDGCN
from .topology import builtin
from .training import evaluate_model, topk_accuracy


@dataclass
class EnsembleMember:
    checkpoint: str
    stream: str = "joint"
    com: str = "belly"
    weight: float = 1.0


@dataclass
class EnsembleSpec:
    members: List[EnsembleMember]

    def __post_init__(self):
        if not self.members:
            raise ConfigError("ensemble needs at least one member")
        weights = np.array([m.weight for m in self.members], dtype=np.float64)
        if not np.all(np.isfinite(weights)) or np.any(weights < 0) or not np.any(weights > 0):
            raise ConfigError("member weights must be finite, non-negative, not all zero")

    @classmethod
    def load(cls, path) -> "EnsembleSpec":
        d = json.loads(Path(path).read_text())
        return cls(members=[EnsembleMember(**m) for m in d["members"]])

    def save(self, path) -> None:
        payload = {"members": [vars(m) for m in self.members]}
        Path(path).write_text(json.dumps(payload, indent=1) + "\n")


@dataclass
class EvalReport:
    top1: float
    top5: float
    per_class: Dict[str, float]
    confusion: np.ndarray  # (K, K), rows true, columns predicted
    per_member: List[dict]

    def to_dict(self) -> dict:
        return {"top1": self.top1, "top5": self.top5, "per_class": self.per_class,
                "confusion": self.confusion.tolist(), "per_member": self.per_member}


def fuse(scores: Sequence[np.ndarray], weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Weighted sum of per-member class-probability arrays."""
    if not scores:
        raise ConfigError("fuse needs at least one score array")
    ref = np.asarray(scores[0], dtype=np.float64)
    if weights is None:
        weights = [1.0] * len(scores)
    if len(weights) != len(scores):
        raise ShapeError(f"{len(scores)} score arrays but {len(weights)} weights")
    fused = np.zeros_like(ref)
    for w, s in zip(weights, scores):
        s = np.asarray(s, dtype=np.float64)
        if s.shape != ref.shape:
            raise ShapeError(f"score shape {s.shape} does not match {ref.shape}")
        fused += w * s
    return fused


def predictions(fused: np.ndarray) -> np.ndarray:
    """Argmax per row; np.argmax already takes the lowest index on ties."""
    return np.argmax(fused, axis=1)


def evaluate(spec: EnsembleSpec, manifest: DatasetManifest, window: Optional[int] = None,
             batch_size: int = 64) -> EvalReport:
    """Run every member on its derived stream, fuse, and report."""
    member_scores: List[np.ndarray] = []
    per_member: List[dict] = []
    labels: Optional[np.ndarray] = None
    for m in spec.members:
        try:
            model = HDGCN.load(m.checkpoint)
        except OSError as exc:
            raise DataError(f"member {m.checkpoint}: cannot load checkpoint ({exc})") from exc
        win = window or model.config.window
        try:
            x, y = load_arrays(manifest, stream=m.stream, com=m.com, window=win,
                               topology=builtin(model.config.topology))
        except DataError as exc:
            raise DataError(f"member {m.checkpoint} ({m.stream}/{m.com}): {exc}") from exc
        if labels is None:
            labels = y
        top1, top5, logits = evaluate_model(model, x, y, batch_size)
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        member_scores.append(probs)
        per_member.append({"checkpoint": str(m.checkpoint), "stream": m.stream,
                           "com": m.com, "weight": m.weight, "top1": top1, "top5": top5})
    fused = fuse(member_scores, [m.weight for m in spec.members])
    top1, top5 = topk_accuracy(fused, labels)
    preds = predictions(fused)
    K = fused.shape[1]
    confusion = np.zeros((K, K), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    per_class = {}
    for k, name in enumerate(manifest.classes):
        total = int(confusion[k].sum())
        per_class[name] = float(confusion[k, k] / total) if total else float("nan")
    return EvalReport(top1=top1, top5=top5, per_class=per_class,
                      confusion=confusion, per_member=per_member)
