"""Glue between the detector and the metrics."""

from __future__ import annotations

from .dataset import SkeletonSequence, normalize
from .evaluation import EvalConfig, EvalReport, SequenceResult, evaluate
from .inference import DetectorConfig, detect_sequence


def run_detector(model, sequences: list[SkeletonSequence], config: DetectorConfig | None = None):
    results = []
    for seq in sequences:
        outputs, events, detections = detect_sequence(model, normalize(seq).features(), config)
        results.append(SequenceResult(list(seq.annotations), detections, events,
                                      outputs.y, outputs.p_start, outputs.p_end))
    return results


def evaluate_model(model, sequences, det_cfg: DetectorConfig | None = None,
                   eval_cfg: EvalConfig | None = None) -> tuple[EvalReport, list[SequenceResult]]:
    if not sequences:
        raise ValueError("no sequences to evaluate")
    results = run_detector(model, sequences, det_cfg)
    return evaluate(results, sequences[0].num_classes, eval_cfg), results
