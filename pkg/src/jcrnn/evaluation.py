"""Detection metrics: overlap F1, start/end localization scores, action-based F1
and frame-level forecast precision/recall.

Intervals are half-open ``[start, end)``; their length in frames is
``end - start``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np


def _default_grid():
    return [round(0.05 * i, 2) for i in range(21)]


@dataclass
class EvalConfig:
    alpha_threshold: float = 0.6
    action_f1_tolerance: int = 4
    horizon_T: int = 10
    threshold_grid: list[float] = field(default_factory=_default_grid)

    def __post_init__(self):
        if not 0.0 < self.alpha_threshold <= 1.0:
            raise ValueError("alpha_threshold must lie in (0, 1]")
        if self.action_f1_tolerance < 0 or self.horizon_T < 0:
            raise ValueError("tolerance and horizon must be >= 0")
        if not self.threshold_grid:
            raise ValueError("threshold_grid must not be empty")


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class Counts:
    tp: int = 0
    n_det: int = 0
    n_gt: int = 0

    def __add__(self, other: Counts) -> Counts:
        return Counts(self.tp + other.tp, self.n_det + other.n_det, self.n_gt + other.n_gt)

    @property
    def precision(self) -> float:
        return self.tp / self.n_det if self.n_det else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.n_gt if self.n_gt else 0.0

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def summary(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "detections": self.n_det, "groundtruth": self.n_gt}


def overlap_ratio(a, b) -> float:
    """Intersection over union of two frame intervals."""
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


def match(detections, groundtruth, alpha_threshold: float):
    """Greedy one-to-one matching by descending overlap; same class and overlap > threshold.

    Returns ``(det_index, gt_index, overlap)`` triples.
    """
    pairs = []
    for i, d in enumerate(detections):
        for j, g in enumerate(groundtruth):
            if d.class_id == g.class_id:
                a = overlap_ratio(d, g)
                if a > alpha_threshold:
                    pairs.append((-a, i, j))
    pairs.sort()
    used_d, used_g, out = set(), set(), []
    for neg_a, i, j in pairs:
        if i not in used_d and j not in used_g:
            used_d.add(i)
            used_g.add(j)
            out.append((i, j, -neg_a))
    return out


def class_counts(detections, groundtruth, alpha_threshold: float, classes=None) -> dict[int, Counts]:
    matched = match(detections, groundtruth, alpha_threshold)
    if classes is None:
        classes = sorted({d.class_id for d in detections} | {g.class_id for g in groundtruth})
    counts = {k: Counts() for k in classes}
    for d in detections:
        counts.setdefault(d.class_id, Counts()).n_det += 1
    for g in groundtruth:
        counts.setdefault(g.class_id, Counts()).n_gt += 1
    for i, _, _ in matched:
        counts[detections[i].class_id].tp += 1
    return counts


def match_and_f1(detections, groundtruth, alpha_threshold: float = 0.6, classes=None):
    """Per-class ``(precision, recall, f1)``."""
    counts = class_counts(detections, groundtruth, alpha_threshold, classes)
    return {k: (c.precision, c.recall, c.f1) for k, c in counts.items()}


def localization_sums(detections, groundtruth, alpha_threshold: float = 0.6):
    """``(sum SL, sum EL, n_gt + n_false_positive)`` for one sequence."""
    matched = match(detections, groundtruth, alpha_threshold)
    sl = el = 0.0
    for i, j, _ in matched:
        d, g = detections[i], groundtruth[j]
        length = g.end - g.start
        sl += math.exp(-abs(d.start - g.start) / length)
        el += math.exp(-abs(d.end - g.end) / length)
    n_fp = len(detections) - len(matched)
    return sl, el, len(groundtruth) + n_fp


def sl_el_scores(detections, groundtruth, alpha_threshold: float = 0.6) -> tuple[float, float]:
    sl, el, denom = localization_sums(detections, groundtruth, alpha_threshold)
    if denom == 0:
        return 0.0, 0.0
    return sl / denom, el / denom


def action_counts(detections, groundtruth, tolerance: int = 4) -> Counts:
    """Start-point matching: same class and ``|start error| <= tolerance``, nearest first."""
    pairs = []
    for i, d in enumerate(detections):
        for j, g in enumerate(groundtruth):
            dist = abs(d.start - g.start)
            if d.class_id == g.class_id and dist <= tolerance:
                pairs.append((dist, i, j))
    pairs.sort()
    used_d, used_g = set(), set()
    for _, i, j in pairs:
        if i not in used_d and j not in used_g:
            used_d.add(i)
            used_g.add(j)
    return Counts(len(used_d), len(detections), len(groundtruth))


def action_based_f1(detections, groundtruth, tolerance: int = 4) -> float:
    return action_counts(detections, groundtruth, tolerance).f1


def forecast_windows(groundtruth, kind: str, horizon_T: int, n_frames: int):
    """``(class, lo, hi)`` with inclusive frame bounds, clipped to the sequence."""
    out = []
    for g in groundtruth:
        anchor = g.start if kind == "start" else g.end - 1
        lo = max(0, anchor - horizon_T)
        hi = min(n_frames - 1, anchor)
        if hi >= lo:
            out.append((g.class_id, lo, hi))
    return out


def forecast_classes(y: np.ndarray) -> np.ndarray:
    """Predicted action class per frame; a forecast never names the blank class."""
    y = np.asarray(y)
    return 1 + np.argmax(y[:, 1:], axis=1)


def window_truth(groundtruth, kind: str, horizon_T: int, n_frames: int) -> np.ndarray:
    """Per-frame class of the forecast window containing the frame (0 outside all windows)."""
    truth = np.zeros(n_frames, dtype=np.int64)
    for cls, lo, hi in forecast_windows(groundtruth, kind, horizon_T, n_frames):
        block = truth[lo:hi + 1]
        block[block == 0] = cls
    return truth


def forecast_pr(runs, kind: str, horizon_T: int, threshold_grid) -> list[tuple[float, float, float]]:
    """Frame-level forecast precision/recall for every threshold.

    ``runs`` holds ``(pred_class, confidence, groundtruth)`` per sequence,
    with per-frame arrays. A frame forecasts when its confidence is at
    least the threshold; it is a true positive when it lies in the
    ``[anchor - T, anchor]`` window of a ground-truth action of the
    predicted class.
    """
    if len(threshold_grid) == 0:
        raise ValueError("threshold_grid must not be empty")
    prepared = []
    n_pos = 0
    for pred_class, conf, gts in runs:
        n = len(conf)
        truth = window_truth(gts, kind, horizon_T, n)
        n_pos += sum(hi - lo + 1 for _, lo, hi in forecast_windows(gts, kind, horizon_T, n))
        prepared.append((np.asarray(pred_class), np.asarray(conf), truth))
    out = []
    for theta in threshold_grid:
        tp = n_pred = 0
        for pred_class, conf, truth in prepared:
            fired = conf >= theta
            n_pred += int(fired.sum())
            tp += int(np.sum(fired & (truth == pred_class)))
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_pos if n_pos else 0.0
        out.append((float(theta), precision, recall))
    return out


def forecast_confusion(events, groundtruth, horizon_T: int, num_classes: int, n_frames: int | None = None,
                       kind: str = "forecast_start") -> np.ndarray:
    """Rows: class of the window the forecast falls in (0 = none); columns: predicted class."""
    if n_frames is None:
        n_frames = max([g.end for g in groundtruth] + [e.frame + 1 for e in events] + [0])
    truth = window_truth(groundtruth, "start" if kind == "forecast_start" else "end", horizon_T, n_frames)
    mat = np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64)
    for e in events:
        if e.kind != kind:
            continue
        row = int(truth[e.frame]) if e.frame < n_frames else 0
        mat[row, e.class_id] += 1
    return mat


@dataclass
class SequenceResult:
    """Everything the metrics need from one detector run."""

    groundtruth: list
    detections: list
    events: list
    y: np.ndarray
    p_start: np.ndarray
    p_end: np.ndarray


@dataclass
class EvalReport:
    per_class: dict
    average_f1: float
    sl: float
    el: float
    action_f1: dict
    pr_start: list
    pr_end: list
    confusion: list

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def read_json(cls, path) -> EvalReport:
        with open(path) as fh:
            doc = json.load(fh)
        return cls(**doc)

    def write_pr_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "theta", "precision", "recall"])
            for kind, rows in (("start", self.pr_start), ("end", self.pr_end)):
                for theta, p, r in rows:
                    w.writerow([kind, theta, repr(p), repr(r)])

    def write_confusion_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            k = len(self.confusion)
            w.writerow(["true\\pred"] + [str(c) for c in range(k)])
            for i, row in enumerate(self.confusion):
                w.writerow([str(i)] + [str(v) for v in row])


def evaluate(results: list[SequenceResult], num_classes: int, cfg: EvalConfig | None = None) -> EvalReport:
    cfg = cfg or EvalConfig()
    classes = list(range(1, num_classes + 1))
    counts = {k: Counts() for k in classes}
    act = Counts()
    sl_sum = el_sum = 0.0
    denom = 0
    confusion = np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64)
    for r in results:
        for k, c in class_counts(r.detections, r.groundtruth, cfg.alpha_threshold, classes).items():
            counts[k] = counts[k] + c
        sl, el, d = localization_sums(r.detections, r.groundtruth, cfg.alpha_threshold)
        sl_sum += sl
        el_sum += el
        denom += d
        act = act + action_counts(r.detections, r.groundtruth, cfg.action_f1_tolerance)
        confusion += forecast_confusion(r.events, r.groundtruth, cfg.horizon_T, num_classes, len(r.y))
    per_class = {str(k): counts[k].summary() for k in classes}
    pred = [forecast_classes(r.y) for r in results]
    pr_start = forecast_pr([(c, r.p_start, r.groundtruth) for c, r in zip(pred, results)],
                           "start", cfg.horizon_T, cfg.threshold_grid)
    pr_end = forecast_pr([(c, r.p_end, r.groundtruth) for c, r in zip(pred, results)],
                         "end", cfg.horizon_T, cfg.threshold_grid)
    return EvalReport(
        per_class=per_class,
        average_f1=float(np.mean([counts[k].f1 for k in classes])),
        sl=sl_sum / denom if denom else 0.0,
        el=el_sum / denom if denom else 0.0,
        action_f1=act.summary(),
        pr_start=[list(row) for row in pr_start],
        pr_end=[list(row) for row in pr_end],
        confusion=confusion.tolist(),
    )
