"""Skeleton streams: data model, normalization, file I/O and a synthetic generator.

Action intervals are half-open ``[start, end)`` in frame indices everywhere
in this package. Class 0 is the blank (no action) class; annotations use
classes ``1..num_classes``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Rng


class DatasetError(ValueError):
    """Malformed or inconsistent skeleton data."""


@dataclass(frozen=True)
class ActionAnnotation:
    class_id: int
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SkeletonFrame:
    t: int
    joints: np.ndarray  # (J, 3)


@dataclass(eq=False)
class SkeletonSequence:
    """A stream of ``N`` frames of ``J`` joints plus its ground truth.

    ``joints`` has shape ``(N, J, 3)``.
    """

    joints: np.ndarray
    annotations: tuple[ActionAnnotation, ...]
    num_classes: int
    fps: float = 30.0
    name: str = ""

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        self.annotations = tuple(self.annotations)
        if self.joints.ndim != 3 or self.joints.shape[2] != 3:
            raise DatasetError(f"joints must have shape (N, J, 3), got {self.joints.shape}")
        if self.joints.shape[1] < 1:
            raise DatasetError("a frame needs at least one joint")
        if not np.all(np.isfinite(self.joints)):
            raise DatasetError("joint coordinates must be finite")
        if self.num_classes < 1:
            raise DatasetError(f"num_classes must be >= 1, got {self.num_classes}")
        validate_annotations(self.annotations, len(self), self.num_classes)

    def __len__(self) -> int:
        return self.joints.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joints.shape[1]

    @property
    def input_dim(self) -> int:
        return 3 * self.num_joints

    def features(self) -> np.ndarray:
        """Per-frame flat feature vectors, shape ``(N, 3J)``."""
        return self.joints.reshape(len(self), -1)

    def frames(self):
        for t in range(len(self)):
            yield SkeletonFrame(t, self.joints[t])

    def frame_labels(self) -> np.ndarray:
        """Raw per-frame class ids (no forecast shift)."""
        labels = np.zeros(len(self), dtype=np.int64)
        for a in self.annotations:
            labels[a.start:a.end] = a.class_id
        return labels


def validate_annotations(annotations, n_frames: int, num_classes: int) -> None:
    prev_end = 0
    for i, a in enumerate(annotations):
        where = f"annotation {i} (class {a.class_id}, [{a.start}, {a.end}))"
        if not 1 <= a.class_id <= num_classes:
            raise DatasetError(f"{where}: class must lie in 1..{num_classes}")
        if not 0 <= a.start < a.end:
            raise DatasetError(f"{where}: requires 0 <= start < end")
        if a.end > n_frames:
            raise DatasetError(f"{where}: end exceeds sequence length {n_frames}")
        if a.start < prev_end:
            raise DatasetError(f"{where}: overlaps or precedes the previous annotation")
        prev_end = a.end


def normalize(seq: SkeletonSequence) -> SkeletonSequence:
    """Translate every frame so that joint 0 sits at the origin."""
    joints = seq.joints - seq.joints[:, :1, :]
    return SkeletonSequence(joints, seq.annotations, seq.num_classes, seq.fps, seq.name)


def normalize_frame(joints: np.ndarray) -> np.ndarray:
    joints = np.asarray(joints, dtype=np.float64)
    return joints - joints[:1, :]


# --- file I/O -------------------------------------------------------------


def save_sequence(seq: SkeletonSequence, frames_path, annotations_path) -> None:
    with open(frames_path, "w") as fh:
        for t in range(len(seq)):
            fh.write(json.dumps({"t": t, "joints": seq.joints[t].tolist()}) + "\n")
    doc = {
        "num_classes": seq.num_classes,
        "fps": seq.fps,
        "actions": [{"class": a.class_id, "start": a.start, "end": a.end} for a in seq.annotations],
    }
    Path(annotations_path).write_text(json.dumps(doc, indent=1) + "\n")


def read_frames(frames_path) -> np.ndarray:
    """Parse a JSON Lines frames file into an ``(N, J, 3)`` array."""
    frames = []
    n_joints = None
    with open(frames_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            frames.append(parse_frame_line(line, lineno, len(frames), n_joints))
            n_joints = frames[-1].shape[0]
    if not frames:
        raise DatasetError(f"{frames_path}: no frames")
    return np.stack(frames)


def parse_frame_line(line: str, lineno: int, expected_t: int | None = None,
                     n_joints: int | None = None) -> np.ndarray:
    try:
        obj = json.loads(line)
        t = obj["t"]
        joints = np.array(obj["joints"], dtype=np.float64)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"line {lineno}: cannot parse frame: {exc}") from exc
    if expected_t is not None and t != expected_t:
        raise DatasetError(f"line {lineno}: expected t={expected_t}, got t={t}")
    if joints.ndim != 2 or joints.shape[1] != 3 or joints.shape[0] < 1:
        raise DatasetError(f"line {lineno}: joints must be a non-empty list of [x, y, z]")
    if n_joints is not None and joints.shape[0] != n_joints:
        raise DatasetError(f"line {lineno}: expected {n_joints} joints, got {joints.shape[0]}")
    if not np.all(np.isfinite(joints)):
        raise DatasetError(f"line {lineno}: non-finite coordinate")
    return joints


def load_sequence(frames_path, annotations_path, name: str = "") -> SkeletonSequence:
    joints = read_frames(frames_path)
    try:
        doc = json.loads(Path(annotations_path).read_text())
        actions = [ActionAnnotation(int(a["class"]), int(a["start"]), int(a["end"]))
                   for a in doc["actions"]]
        num_classes = int(doc["num_classes"])
        fps = float(doc.get("fps", 30.0))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{annotations_path}: cannot parse annotations: {exc}") from exc
    return SkeletonSequence(joints, actions, num_classes, fps, name or Path(frames_path).stem)


def save_split(sequences, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, seq in enumerate(sequences):
        stem = seq.name or f"seq{i:04d}"
        save_sequence(seq, directory / f"{stem}.frames.jsonl", directory / f"{stem}.actions.json")


def load_split(directory) -> list[SkeletonSequence]:
    directory = Path(directory)
    out = []
    for frames_path in sorted(directory.glob("*.frames.jsonl")):
        stem = frames_path.name[: -len(".frames.jsonl")]
        out.append(load_sequence(frames_path, directory / f"{stem}.actions.json", stem))
    return out


# --- synthetic generator --------------------------------------------------


@dataclass
class SynthConfig:
    num_classes: int = 3
    joints: int = 8
    num_sequences: int = 50
    actions_per_sequence: int = 3
    action_len: int = 35
    action_jitter: int = 8
    gap_len: int = 15
    gap_jitter: int = 5
    lead_in: int = 8
    amplitude: float = 0.3
    noise_std: float = 0.02
    fps: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.joints < 2:
            raise ValueError("need num_classes >= 1 and joints >= 2")
        if self.num_sequences < 1 or self.actions_per_sequence < 1:
            raise ValueError("need at least one sequence and one action per sequence")
        if self.action_len - self.action_jitter < 1 or self.gap_len - self.gap_jitter < 1:
            raise ValueError("action and gap lengths must stay positive under jitter")
        if self.lead_in < 0 or self.noise_std < 0:
            raise ValueError("lead_in and noise_std must be non-negative")


@dataclass(frozen=True)
class _Template:
    freq: float          # cycles per frame
    weights: np.ndarray  # (J, 3) per-coordinate amplitude, zero on unused limbs
    phases: np.ndarray   # (J, 3)


def _rest_pose(n_joints: int) -> np.ndarray:
    # a vertical chain with alternating lateral offsets
    j = np.arange(n_joints, dtype=np.float64)
    return np.stack([0.15 * ((j % 3) - 1.0), 0.2 * j, 0.05 * (j % 2)], axis=1)


def _class_template(class_id: int, n_joints: int) -> _Template:
    # fixed per-class seed: templates do not depend on the dataset seed
    rng = Rng(7919 * class_id + 17)
    freq = 0.04 + 0.035 * ((class_id - 1) % 5)
    limbs = np.zeros(n_joints)
    for j in range(1, n_joints):
        limbs[j] = 1.0 if (j + class_id) % 3 != 0 else 0.25
    weights = limbs[:, None] * rng.uniform_block(0.5, 1.0, (n_joints, 3))
    phases = rng.uniform_block(0.0, 2.0 * math.pi, (n_joints, 3))
    return _Template(freq, weights, phases)


def _motion(tmpl: _Template, tau: np.ndarray) -> np.ndarray:
    """Template displacement at action-relative times ``tau``, shape (len(tau), J, 3)."""
    arg = 2.0 * math.pi * tmpl.freq * tau[:, None, None] + tmpl.phases[None]
    return tmpl.weights[None] * np.sin(arg)


def _envelope(tau: np.ndarray, length: int, lead_in: int) -> np.ndarray:
    env = np.ones_like(tau, dtype=np.float64)
    pre = tau < 0
    if lead_in > 0:
        # preparatory motion ramps up before the annotated start
        env[pre] = 0.4 * (1.0 + tau[pre] / lead_in)
        tail = tau >= length - lead_in
        env[tail] = 1.0 - 0.6 * (tau[tail] - (length - lead_in) + 1) / lead_in
    else:
        env[pre] = 0.0
    return np.clip(env, 0.0, 1.0)


def _class_schedule(cfg: SynthConfig, rng: Rng) -> list[int]:
    total = cfg.num_sequences * cfg.actions_per_sequence
    classes = list(range(1, cfg.num_classes + 1))
    out: list[int] = []
    while len(out) < total:
        out.extend(rng.shuffle(classes))
    return out[:total]


def generate(cfg: SynthConfig) -> list[SkeletonSequence]:
    """Synthesize skeleton streams alternating idle gaps and actions.

    Each class has a fixed sinusoidal trajectory template over a class
    specific subset of joints. A reduced-amplitude version of the template
    starts ``lead_in`` frames before the annotated start, and the amplitude
    decays over the last ``lead_in`` frames of the action, so starts and
    ends are foreseeable a few frames ahead. Class counts over the whole
    output differ by at most one.
    """
    rng = Rng(cfg.seed)
    schedule = _class_schedule(cfg, rng)
    rest = _rest_pose(cfg.joints)
    templates = {k: _class_template(k, cfg.joints) for k in range(1, cfg.num_classes + 1)}
    out = []
    for s in range(cfg.num_sequences):
        classes = schedule[s * cfg.actions_per_sequence:(s + 1) * cfg.actions_per_sequence]
        gaps = [rng.randint(cfg.gap_len - cfg.gap_jitter, cfg.gap_len + cfg.gap_jitter)
                for _ in range(len(classes) + 1)]
        # leading and trailing gaps are half length so idle time ~ one gap per action
        gaps[0] = max(1, gaps[0] // 2)
        gaps[-1] = max(2, gaps[-1] // 2)
        lengths = [rng.randint(cfg.action_len - cfg.action_jitter, cfg.action_len + cfg.action_jitter)
                   for _ in classes]
        annotations = []
        t = 0
        for gap, length, k in zip(gaps, lengths, classes):
            t += gap
            annotations.append(ActionAnnotation(k, t, t + length))
            t += length
        n = t + gaps[-1]

        joints = np.repeat(rest[None], n, axis=0)
        for a in annotations:
            lo = max(0, a.start - cfg.lead_in)
            tau = np.arange(lo - a.start, a.length, dtype=np.float64)
            env = _envelope(tau, a.length, cfg.lead_in)
            joints[lo:a.end] += cfg.amplitude * env[:, None, None] * _motion(templates[a.class_id], tau)
        root_offset = np.array([rng.uniform(-1.0, 1.0), 0.0, rng.uniform(2.0, 4.0)])
        drift = np.cumsum(rng.normal_block((n, 3), std=0.002), axis=0)
        joints += (root_offset + drift)[:, None, :]
        if cfg.noise_std > 0:
            joints += rng.normal_block(joints.shape, std=cfg.noise_std)
        out.append(SkeletonSequence(joints, annotations, cfg.num_classes, cfg.fps, f"seq{s:04d}"))
    return out


def split(sequences, train_fraction: float, seed: int):
    """Deterministic disjoint train/test split."""
    sequences = list(sequences)
    if len(sequences) < 2:
        raise DatasetError("need at least two sequences to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = min(max(round(train_fraction * len(sequences)), 1), len(sequences) - 1)
    order = Rng(seed).shuffle(list(range(len(sequences))))
    train_idx = sorted(order[:n_train])
    test_idx = sorted(order[n_train:])
    return [sequences[i] for i in train_idx], [sequences[i] for i in test_idx]
