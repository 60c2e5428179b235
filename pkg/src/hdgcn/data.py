"""Skeleton sequence I/O, stream derivation and synthetic data.

Sequences are (persons, 3, frames, joints) float32 arrays bound to a
topology name and a stream tag. Bone streams are child-minus-parent
spatial differentials rooted at a chosen CoM joint; motion streams are
one-frame temporal differentials with a zero-padded final frame.

Two on-disk forms exist: a human-readable JSON mirror and the HDS1
binary layout (little-endian): magic ``HDS1``, u8 version, u8 stream
tag, u16 persons, u32 frames, u16 joints, u16 label (0xFFFF = none),
u16 topology-name length + UTF-8 bytes, then persons*3*frames*joints
f32 values in (M, 3, T, V) order.

The synthetic generator animates the ntu25 skeleton with class-specific
oscillation primitives localized to distinct hierarchy regions, so the
dataset is learnable at desk scale while still separating graph and
attention ablations.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError
from .topology import SkeletonTopology, builtin, parent_map

STREAMS = ("joint", "bone", "joint_motion", "bone_motion")
HDS_MAGIC = b"HDS1"
HDS_VERSION = 1
NO_LABEL = 0xFFFF


@dataclass
class SkeletonSequence:
    """A skeleton time series bound to a topology and stream tag."""
    topology: str
    data: np.ndarray  # (M, 3, T, V) float32
    label: Optional[int] = None
    stream: str = "joint"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4 or self.data.shape[1] != 3:
            raise DataError(f"sequence data must be (M, 3, T, V), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("sequence contains non-finite values")
        if self.stream not in STREAMS:
            raise DataError(f"unknown stream tag {self.stream!r}")

    @property
    def persons(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[2]

    @property
    def joints(self) -> int:
        return self.data.shape[3]


# ---------------------------------------------------------------------------
# stream derivation
# ---------------------------------------------------------------------------

def derive_bone(seq: SkeletonSequence, topology: SkeletonTopology, com) -> SkeletonSequence:
    """Spatial differential: bone[v] = joint[v] - joint[parent(v)] with the
    tree rooted at ``com``; the CoM joint's bone is zero."""
    if seq.stream not in ("joint", "joint_motion"):
        raise DataError(f"bone stream derives from a joint stream, got {seq.stream!r}")
    if seq.joints != topology.num_joints:
        raise DataError(f"sequence has {seq.joints} joints, topology {topology.num_joints}")
    parents = parent_map(topology, com)
    order = np.array([parents[j] - 1 for j in range(1, topology.num_joints + 1)])
    bone = seq.data - seq.data[:, :, :, order]
    tag = "bone" if seq.stream == "joint" else "bone_motion"
    return SkeletonSequence(seq.topology, bone, seq.label, tag)


def derive_motion(seq: SkeletonSequence) -> SkeletonSequence:
    """Temporal differential: motion[t] = x[t+1] - x[t], final frame zero."""
    if seq.stream not in ("joint", "bone"):
        raise DataError(f"motion derives from joint or bone streams, got {seq.stream!r}")
    if seq.frames < 2:
        raise DataError(f"motion needs at least 2 frames, got {seq.frames}")
    motion = np.zeros_like(seq.data)
    motion[:, :, :-1] = seq.data[:, :, 1:] - seq.data[:, :, :-1]
    tag = "joint_motion" if seq.stream == "joint" else "bone_motion"
    return SkeletonSequence(seq.topology, motion, seq.label, tag)


def derive_stream(seq: SkeletonSequence, stream: str, topology: SkeletonTopology,
                  com) -> SkeletonSequence:
    """Derive any of the four streams from a raw joint sequence."""
    if seq.stream != "joint":
        raise DataError(f"derive_stream starts from a joint sequence, got {seq.stream!r}")
    if stream == "joint":
        return seq
    if stream == "bone":
        return derive_bone(seq, topology, com)
    if stream == "joint_motion":
        return derive_motion(seq)
    if stream == "bone_motion":
        return derive_motion(derive_bone(seq, topology, com))
    raise DataError(f"unknown stream {stream!r}")


def preprocess(seq: SkeletonSequence, topology: SkeletonTopology, com,
               window: int = 64, mode: str = "resample") -> SkeletonSequence:
    """Center on the first frame's CoM joint and fit to ``window`` frames.

    ``mode`` "resample" linearly interpolates the frame axis to the
    window; "loop" repeats the sequence (only for short inputs).
    """
    if seq.frames < 1:
        raise DataError("empty sequence")
    com_id = topology.com_joint(com)
    origin = seq.data[0, :, 0, com_id - 1].reshape(1, 3, 1, 1)
    data = seq.data - origin
    T_raw = data.shape[2]
    if mode == "loop":
        reps = -(-window // T_raw)
        data = np.tile(data, (1, 1, reps, 1))[:, :, :window]
    elif mode == "resample":
        if T_raw != window:
            pos = np.linspace(0.0, T_raw - 1, window)
            lo = np.floor(pos).astype(int)
            hi = np.minimum(lo + 1, T_raw - 1)
            w = (pos - lo).astype(np.float32).reshape(1, 1, window, 1)
            data = data[:, :, lo] * (1.0 - w) + data[:, :, hi] * w
    else:
        raise DataError(f"unknown preprocess mode {mode!r}")
    return SkeletonSequence(seq.topology, data, seq.label, seq.stream)


def apply_synthetic_rules(seq: SkeletonSequence, topology: SkeletonTopology) -> SkeletonSequence:
    """Append midpoint-synthesized joints (e.g. the 18 -> 20 pose extension)."""
    if not topology.synthetic_rules:
        return seq
    V_new = topology.num_joints
    base = seq.data
    out = np.zeros(base.shape[:3] + (V_new,), dtype=base.dtype)
    out[:, :, :, :base.shape[3]] = base
    for rule in topology.synthetic_rules:
        a, b = rule.source
        out[:, :, :, rule.new_joint - 1] = 0.5 * (out[:, :, :, a - 1] + out[:, :, :, b - 1])
    return SkeletonSequence(topology.name, out, seq.label, seq.stream)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_sequence(path, seq: SkeletonSequence) -> None:
    path = Path(path)
    if path.suffix == ".json":
        payload = {
            "topology": seq.topology, "stream": seq.stream, "label": seq.label,
            "persons": seq.persons, "frames": seq.frames, "joints": seq.joints,
            "data": seq.data.reshape(-1).tolist(),
        }
        path.write_text(json.dumps(payload) + "\n")
        return
    name = seq.topology.encode("utf-8")
    with path.open("wb") as fh:
        fh.write(HDS_MAGIC)
        fh.write(struct.pack("<BBHIHH", HDS_VERSION, STREAMS.index(seq.stream),
                             seq.persons, seq.frames, seq.joints,
                             NO_LABEL if seq.label is None else seq.label))
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(np.ascontiguousarray(seq.data, dtype="<f4").tobytes())


def read_sequence(path) -> SkeletonSequence:
    path = Path(path)
    if path.suffix == ".json":
        d = json.loads(path.read_text())
        data = np.asarray(d["data"], dtype=np.float32).reshape(
            d["persons"], 3, d["frames"], d["joints"])
        return SkeletonSequence(d["topology"], data, d["label"], d["stream"])
    raw = path.read_bytes()
    if raw[:4] != HDS_MAGIC:
        raise DataError(f"{path}: not an HDS1 file")
    version, stream_tag, M, T, V, label = struct.unpack_from("<BBHIHH", raw, 4)
    if version != HDS_VERSION:
        raise DataError(f"{path}: unsupported HDS version {version}")
    off = 4 + struct.calcsize("<BBHIHH")
    (nlen,) = struct.unpack_from("<H", raw, off)
    off += 2
    topo = raw[off:off + nlen].decode("utf-8")
    off += nlen
    n = M * 3 * T * V
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(M, 3, T, V)
    return SkeletonSequence(topo, data.copy(), None if label == NO_LABEL else label,
                            STREAMS[stream_tag])


@dataclass
class DatasetManifest:
    """A split's file list with labels and generator provenance."""
    name: str
    classes: List[str]
    split: str
    samples: List[Dict]  # {"file": str, "label": int}
    seed: Optional[int] = None
    root: Optional[Path] = None

    def validate(self) -> None:
        for s in self.samples:
            if not 0 <= s["label"] < len(self.classes):
                raise DataError(f"label {s['label']} outside class list in {self.name}")
            if self.root is not None and not (self.root / s["file"]).exists():
                raise DataError(f"missing sample file {s['file']}")

    def save(self, path) -> None:
        path = Path(path)
        payload = {"name": self.name, "classes": self.classes, "split": self.split,
                   "seed": self.seed, "samples": self.samples}
        path.write_text(json.dumps(payload, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        d = json.loads(path.read_text())
        m = cls(name=d["name"], classes=d["classes"], split=d["split"],
                samples=d["samples"], seed=d.get("seed"), root=path.parent)
        m.validate()
        return m

    def load_sequences(self) -> List[SkeletonSequence]:
        if self.root is None:
            raise DataError("manifest has no root directory")
        out = []
        for s in self.samples:
            seq = read_sequence(self.root / s["file"])
            seq.label = s["label"]
            out.append(seq)
        return out


def load_arrays(manifest: DatasetManifest, stream: str = "joint", com="belly",
                window: int = 64, topology: Optional[SkeletonTopology] = None
                ) -> Tuple[np.ndarray, np.ndarray]:
    """Materialize a manifest as (N, M, 3, T, V) inputs and labels.

    Raw joint sequences are centered and resampled to the window first;
    bone/motion streams derive from the preprocessed joint stream.
    """
    seqs = manifest.load_sequences()
    if not seqs:
        raise DataError(f"manifest {manifest.name} has no samples")
    topology = topology or builtin(seqs[0].topology)
    xs, ys = [], []
    for seq in seqs:
        pre = preprocess(seq, topology, com, window)
        derived = derive_stream(pre, stream, topology, com)
        xs.append(derived.data)
        ys.append(seq.label)
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


# ---------------------------------------------------------------------------
# synthetic motion dataset
# ---------------------------------------------------------------------------

# rest pose for the 25-joint skeleton: x right-to-left, y up, z forward
_REST_POSE = {
    1: (0.00, 0.00, 0.0), 2: (0.00, 0.25, 0.0), 21: (0.00, 0.50, 0.0),
    3: (0.00, 0.60, 0.0), 4: (0.00, 0.75, 0.0),
    5: (0.20, 0.50, 0.0), 6: (0.45, 0.50, 0.0), 7: (0.70, 0.50, 0.0),
    8: (0.80, 0.50, 0.0), 22: (0.92, 0.50, 0.0), 23: (0.86, 0.44, 0.0),
    9: (-0.20, 0.50, 0.0), 10: (-0.45, 0.50, 0.0), 11: (-0.70, 0.50, 0.0),
    12: (-0.80, 0.50, 0.0), 24: (-0.92, 0.50, 0.0), 25: (-0.86, 0.44, 0.0),
    13: (0.12, -0.05, 0.0), 14: (0.15, -0.50, 0.0), 15: (0.15, -0.95, 0.0),
    16: (0.18, -1.05, 0.12), 17: (-0.12, -0.05, 0.0), 18: (-0.15, -0.50, 0.0),
    19: (-0.15, -0.95, 0.0), 20: (-0.18, -1.05, 0.12),
}

_LEFT_ARM = (6, 7, 8, 22, 23)
_RIGHT_ARM = (10, 11, 12, 24, 25)
_LEFT_LEG = (14, 15, 16)
_RIGHT_LEG = (18, 19, 20)
_TORSO = (1, 2, 21)
_HEAD = (3, 4)
_HAND_TIPS = (22, 23, 24, 25)
_ALL_GROUPS = (_LEFT_ARM, _RIGHT_ARM, _LEFT_LEG, _RIGHT_LEG, _TORSO, _HEAD)

# class_id -> list of (joint group, axis, amplitude, frequency, phase offset)
# classes 0/1 and 2/3 differ only in the left/right phase relation, which
# rewards edges between distant same-hierarchy joints
_CLASS_PRIMITIVES = {
    0: [(_LEFT_ARM, 2, 0.30, 1.0, 0.0), (_RIGHT_ARM, 2, 0.30, 1.0, 0.0)],
    1: [(_LEFT_ARM, 2, 0.30, 1.0, 0.0), (_RIGHT_ARM, 2, 0.30, 1.0, np.pi)],
    2: [(_LEFT_LEG, 2, 0.30, 1.0, 0.0), (_RIGHT_LEG, 2, 0.30, 1.0, 0.0)],
    3: [(_LEFT_LEG, 2, 0.30, 1.0, 0.0), (_RIGHT_LEG, 2, 0.30, 1.0, np.pi)],
    4: [(_HAND_TIPS, 1, 0.18, 3.0, 0.0)],
    5: [(_TORSO, 0, 0.22, 1.0, 0.0), (_HEAD, 0, 0.30, 1.0, 0.0)],
    6: [(_HEAD, 2, 0.25, 2.0, 0.0)],
    7: [(_TORSO, 1, -0.20, 1.0, 0.0), (_LEFT_LEG, 2, 0.18, 1.0, 0.5),
        (_RIGHT_LEG, 2, 0.18, 1.0, 0.5), (_HEAD, 1, -0.20, 1.0, 0.0)],
}

SYNTHETIC_CLASS_NAMES = (
    "arm-wave-sync", "arm-wave-anti", "leg-kick-sync", "leg-kick-anti",
    "hand-tremble", "torso-sway", "head-nod", "squat",
)


def _rest_pose_array() -> np.ndarray:
    pose = np.zeros((3, 25), dtype=np.float64)
    for j, xyz in _REST_POSE.items():
        pose[:, j - 1] = xyz
    return pose


def synthetic_sample(class_id: int, rng: np.random.Generator, frames: int = 48,
                     noise: float = 0.02) -> SkeletonSequence:
    """One procedurally animated ntu25 sequence for ``class_id``."""
    if class_id not in _CLASS_PRIMITIVES:
        raise DataError(f"synthetic generator defines classes 0..{len(_CLASS_PRIMITIVES) - 1}, "
                        f"got {class_id}")
    pose = _rest_pose_array()
    t = np.arange(frames, dtype=np.float64) / frames
    data = np.repeat(pose[None, :, :], frames, axis=0).transpose(1, 0, 2)  # (3, T, V)

    phase = rng.uniform(0.0, 2.0 * np.pi)
    amp_scale = rng.uniform(0.8, 1.2)
    freq_scale = rng.uniform(0.9, 1.1)
    for group, axis, amp, freq, offset in _CLASS_PRIMITIVES[class_id]:
        wave = amp * amp_scale * np.sin(2.0 * np.pi * (2.0 * freq * freq_scale) * t
                                        + phase + offset)
        for j in group:
            data[axis, :, j - 1] += wave
    # per-sample distractor: a weak oscillation on one unrelated joint group
    distractor = _ALL_GROUPS[rng.integers(0, len(_ALL_GROUPS))]
    d_axis = int(rng.integers(0, 3))
    d_wave = 0.08 * np.sin(2.0 * np.pi * rng.uniform(1.0, 3.0) * t + rng.uniform(0, 2 * np.pi))
    for j in distractor:
        data[d_axis, :, j - 1] += d_wave
    # global placement jitter
    data += rng.normal(0.0, 0.3, size=(3, 1, 1))
    if noise > 0:
        data += rng.normal(0.0, noise, size=data.shape)
    return SkeletonSequence("ntu25", data[None].astype(np.float32), class_id, "joint")


def generate_synthetic(out_dir, num_classes: int = 8, train_per_class: int = 100,
                       test_per_class: int = 25, noise: float = 0.02, seed: int = 0,
                       frames: int = 48) -> Tuple[Path, Path]:
    """Write a seeded synthetic dataset; returns the two manifest paths.

    Generation is per-sample seeded, so outputs are byte-identical for
    equal seeds regardless of ordering.
    """
    if num_classes < 2 or num_classes > len(_CLASS_PRIMITIVES):
        raise DataError(f"num_classes must be in [2, {len(_CLASS_PRIMITIVES)}], got {num_classes}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = []
    for split, per_class, split_code in (("train", train_per_class, 0), ("test", test_per_class, 1)):
        samples = []
        for label in range(num_classes):
            for i in range(per_class):
                rng = np.random.default_rng([seed, split_code, label, i])
                seq = synthetic_sample(label, rng, frames=frames, noise=noise)
                fname = f"{split}_{label:02d}_{i:04d}.hds"
                write_sequence(out_dir / fname, seq)
                samples.append({"file": fname, "label": label})
        manifest = DatasetManifest(
            name=f"synthetic-{num_classes}c", classes=list(SYNTHETIC_CLASS_NAMES[:num_classes]),
            split=split, samples=samples, seed=seed, root=out_dir)
        path = out_dir / f"{split}_manifest.json"
        manifest.save(path)
        manifests.append(path)
    return manifests[0], manifests[1]
