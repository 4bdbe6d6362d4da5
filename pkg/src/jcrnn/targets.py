"""Per-frame training targets: forecast-shifted labels and start/end confidences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SkeletonSequence


@dataclass
class TargetConfig:
    sigma: float = 5.0
    horizon_T: int = 10

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.horizon_T < 0:
            raise ValueError(f"horizon_T must be >= 0, got {self.horizon_T}")


@dataclass(frozen=True)
class FrameTargets:
    z: np.ndarray
    c_start: float
    c_end: float

    @property
    def label(self) -> int:
        return int(np.argmax(self.z))


@dataclass
class SequenceTargets:
    """Targets for a whole sequence, stored column-wise.

    ``z`` is ``(N, M+1)`` one-hot; ``c_start``/``c_end`` are ``(N,)``.
    """

    labels: np.ndarray
    z: np.ndarray
    c_start: np.ndarray
    c_end: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, t: int) -> FrameTargets:
        return FrameTargets(self.z[t], float(self.c_start[t]), float(self.c_end[t]))

    def slice(self, lo: int, hi: int) -> SequenceTargets:
        return SequenceTargets(self.labels[lo:hi], self.z[lo:hi], self.c_start[lo:hi], self.c_end[lo:hi])


def class_labels(seq: SkeletonSequence, horizon_T: int) -> np.ndarray:
    """Class id per frame, with each action's label extended ``horizon_T`` frames early.

    The early window only ever claims blank frames, so the body of an
    earlier action is never relabeled.
    """
    labels = seq.frame_labels()
    in_action = labels != 0
    for a in seq.annotations:
        lo = max(0, a.start - horizon_T)
        window = slice(lo, a.start)
        labels[window] = np.where(in_action[window], labels[window], a.class_id)
    return labels


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    z = np.zeros((len(labels), num_classes + 1))
    z[np.arange(len(labels)), labels] = 1.0
    return z


def anchors(seq: SkeletonSequence, kind: str) -> np.ndarray:
    if kind == "start":
        return np.array([a.start for a in seq.annotations], dtype=np.int64)
    if kind == "end":
        # last frame inside the action
        return np.array([a.end - 1 for a in seq.annotations], dtype=np.int64)
    raise ValueError(f"kind must be 'start' or 'end', got {kind!r}")


def gaussian_confidence(n_frames: int, anchor_frames, sigma: float) -> np.ndarray:
    """exp(-(t - a)^2 / (2 sigma^2)) with ``a`` the nearest anchor to each frame.

    Ties go to the earlier anchor; no anchors gives all zeros.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    anchor_frames = np.asarray(anchor_frames, dtype=np.int64)
    if anchor_frames.size == 0:
        return np.zeros(n_frames)
    t = np.arange(n_frames)
    dist = np.abs(t[:, None] - anchor_frames[None, :])
    # argmin returns the first minimum, which is the earlier anchor on ties
    nearest = anchor_frames[np.argmin(dist, axis=1)]
    d = (t - nearest).astype(np.float64)
    return np.exp(-(d * d) / (2.0 * sigma * sigma))


def confidence_curve(seq: SkeletonSequence, kind: str, sigma: float) -> np.ndarray:
    return gaussian_confidence(len(seq), anchors(seq, kind), sigma)


def build(seq: SkeletonSequence, cfg: TargetConfig | None = None) -> SequenceTargets:
    cfg = cfg or TargetConfig()
    labels = class_labels(seq, cfg.horizon_T)
    return SequenceTargets(
        labels=labels,
        z=one_hot(labels, seq.num_classes),
        c_start=confidence_curve(seq, "start", cfg.sigma),
        c_end=confidence_curve(seq, "end", cfg.sigma),
    )
