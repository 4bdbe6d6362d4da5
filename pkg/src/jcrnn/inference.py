"""Frame-by-frame online detector.

Per frame the detector emits the network output plus any events:

* ``forecast_start`` / ``forecast_end`` when the confidence rises across its
  threshold;
* ``start`` / ``end`` when the previous frame is confirmed as a local
  maximum of the confidence at or above the threshold. Confirmation needs
  the next frame, so these events lag their anchor by one frame.

At the end of the stream, ``finalize`` assembles action intervals from runs
of the smoothed class label and snaps their boundaries to the centers of
nearby confidence peaks.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import ActionAnnotation, normalize_frame
from .network import FrameOutput, SequenceOutput
from .numerics import ShapeError

START, END = "start", "end"
FORECAST_START, FORECAST_END = "forecast_start", "forecast_end"


@dataclass
class DetectorConfig:
    theta_start: float = 0.5
    theta_end: float = 0.5
    peak_min_separation: int = 10
    smoothing_window: int = 5
    min_segment_len: int = 3
    refine_radius: int = 10

    def __post_init__(self):
        for name in ("theta_start", "theta_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ValueError("smoothing_window must be a positive odd number")
        if self.peak_min_separation < 1 or self.min_segment_len < 1 or self.refine_radius < 0:
            raise ValueError("peak_min_separation and min_segment_len must be >= 1, refine_radius >= 0")


@dataclass(frozen=True)
class DetectionEvent:
    kind: str
    class_id: int
    frame: int
    anchor_frame: int
    confidence: float

    def to_dict(self) -> dict:
        return asdict(self)


# detections share the annotation shape: class plus half-open interval
ActionDetection = ActionAnnotation


def majority_label(labels, center: int, lo: int, hi: int) -> int:
    """Most frequent label in ``labels[lo:hi]``; ties prefer the center label, then the smaller id."""
    counts = Counter(labels[lo:hi])
    best = max(counts.values())
    if counts.get(labels[center], 0) == best:
        return int(labels[center])
    return int(min(k for k, v in counts.items() if v == best))


def smooth_labels(labels, window: int) -> np.ndarray:
    labels = [int(v) for v in labels]
    half = window // 2
    n = len(labels)
    return np.array([majority_label(labels, t, max(0, t - half), min(n, t + half + 1))
                     for t in range(n)], dtype=np.int64)


class _Track:
    """Peak and threshold bookkeeping for one confidence series."""

    def __init__(self, theta: float, peak_kind: str, forecast_kind: str):
        self.theta = theta
        self.peak_kind = peak_kind
        self.forecast_kind = forecast_kind
        self.last_anchor: int | None = None
        self.last_emit: int | None = None


class OnlineDetector:
    """Streaming detector over any model exposing ``initial_state``/``step``."""

    def __init__(self, model, config: DetectorConfig | None = None):
        self.model = model
        self.config = config or DetectorConfig()
        self.reset()

    def reset(self) -> OnlineDetector:
        cfg = self.config
        self.state = self.model.initial_state()
        self.t = 0
        self.y: list[np.ndarray] = []
        self.argmax: list[int] = []
        self.p = {START: [], END: []}
        self.events: list[DetectionEvent] = []
        self.tracks = {START: _Track(cfg.theta_start, START, FORECAST_START),
                       END: _Track(cfg.theta_end, END, FORECAST_END)}
        return self

    def step(self, frame) -> tuple[FrameOutput, list[DetectionEvent]]:
        """Consume one frame. 2-D input is treated as raw ``(J, 3)`` joints and normalized."""
        x = np.asarray(frame, dtype=np.float64)
        if x.ndim == 2:
            x = normalize_frame(x).ravel()
        if x.shape != (self.model.input_dim,):
            raise ShapeError(f"frame has shape {np.shape(frame)}, model expects {self.model.input_dim} features")
        y, ps, pe, self.state = self.model.step(x, self.state)
        t = self.t
        self.y.append(y)
        self.argmax.append(int(np.argmax(y)))
        self.p[START].append(float(ps))
        self.p[END].append(float(pe))
        new = []
        for key in (START, END):
            new.extend(self._track_events(key, t))
        self.events.extend(new)
        self.t += 1
        return FrameOutput(y, float(ps), float(pe)), new

    def _track_events(self, key: str, t: int) -> list[DetectionEvent]:
        track = self.tracks[key]
        p = self.p[key]
        sep = self.config.peak_min_separation
        out = []
        c = t - 1
        if c >= 0:
            left = p[c - 1] if c >= 1 else -np.inf
            if left <= p[c] > p[t] and p[c] >= track.theta and (
                    track.last_anchor is None or c - track.last_anchor >= sep):
                out.append(DetectionEvent(track.peak_kind, self.event_class(c), t, c, p[c]))
                track.last_anchor = c
                track.last_emit = t
        prev = p[t - 1] if t >= 1 else -np.inf
        if prev < track.theta <= p[t] and (track.last_emit is None or t - track.last_emit >= sep):
            out.append(DetectionEvent(track.forecast_kind, self.event_class(t), t, t, p[t]))
        return out

    def event_class(self, anchor: int) -> int:
        """Smoothed label at ``anchor`` using frames seen so far; blank falls back to the best action class."""
        half = self.config.smoothing_window // 2
        label = majority_label(self.argmax, anchor, max(0, anchor - half), min(self.t + 1, anchor + half + 1))
        if label == 0 and len(self.y[anchor]) > 1:
            label = 1 + int(np.argmax(self.y[anchor][1:]))
        return label

    def outputs(self) -> SequenceOutput:
        k = len(self.y[0]) if self.y else 0
        return SequenceOutput(np.array(self.y).reshape(-1, k), np.array(self.p[START]), np.array(self.p[END]))

    def anchors(self, kind: str) -> list[int]:
        return [e.anchor_frame for e in self.events if e.kind == kind]

    def peak_centers(self, kind: str) -> list[int]:
        """Center of the above-threshold excursion around each confirmed peak.

        The raw local maximum wanders on a flat top; the excursion midpoint
        uses the whole rise and fall of the confidence and is steadier.
        """
        p = self.p[kind]
        theta = self.tracks[kind].theta
        out = []
        for a in self.anchors(kind):
            lo, hi = a, a
            while lo > 0 and p[lo - 1] >= theta:
                lo -= 1
            while hi + 1 < len(p) and p[hi + 1] >= theta:
                hi += 1
            out.append((lo + hi) // 2)
        return out

    def finalize(self) -> list[ActionDetection]:
        cfg = self.config
        labels = smooth_labels(self.argmax, cfg.smoothing_window)
        starts = self.peak_centers(START)
        # an end anchor is the last in-action frame
        ends = [a + 1 for a in self.peak_centers(END)]
        out = []
        for cls, lo, hi in label_runs(labels):
            if cls == 0 or hi - lo < cfg.min_segment_len:
                continue
            new_lo = _nearest(starts, lo, cfg.refine_radius)
            new_hi = _nearest(ends, hi, cfg.refine_radius)
            new_lo = lo if new_lo is None else new_lo
            new_hi = hi if new_hi is None else new_hi
            if new_hi <= new_lo:
                new_lo, new_hi = lo, hi
            out.append(ActionDetection(int(cls), int(new_lo), int(new_hi)))
        return _resolve_overlaps(out)


def label_runs(labels):
    """Maximal runs ``(label, start, end)`` with half-open ends."""
    runs = []
    n = len(labels)
    lo = 0
    for t in range(1, n + 1):
        if t == n or labels[t] != labels[lo]:
            runs.append((int(labels[lo]), lo, t))
            lo = t
    return runs


def _nearest(candidates, target: int, radius: int):
    best = None
    for c in candidates:
        d = abs(c - target)
        if d <= radius and (best is None or d < abs(best - target)):
            best = c
    return best


def _resolve_overlaps(dets: list[ActionDetection]) -> list[ActionDetection]:
    # refinement may push neighbours into each other; clip the later start
    out: list[ActionDetection] = []
    for d in sorted(dets, key=lambda d: (d.start, d.end)):
        if out and d.start < out[-1].end:
            if d.end <= out[-1].end:
                continue
            d = ActionDetection(d.class_id, out[-1].end, d.end)
        out.append(d)
    return out


def detect_sequence(model, features, config: DetectorConfig | None = None):
    """Run a fresh detector over ``features``; returns ``(outputs, events, detections)``."""
    det = OnlineDetector(model, config)
    for x in np.asarray(features, dtype=np.float64):
        det.step(x)
    return det.outputs(), list(det.events), det.finalize()
