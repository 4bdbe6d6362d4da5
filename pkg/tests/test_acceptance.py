"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The end-to-end criteria share one module-scoped run of the command-line
pipeline (gen, train, eval) on ``configs/synthetic.json``. A full run takes
a few minutes on one CPU core.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from jcrnn.cli import main
from jcrnn.dataset import ActionAnnotation, SkeletonSequence
from jcrnn.evaluation import EvalReport, action_based_f1, match_and_f1, overlap_ratio, sl_el_scores
from jcrnn.inference import OnlineDetector
from jcrnn.network import ForwardCache, Model, ModelConfig, forward_sequence, soft_selector
from jcrnn.numerics import Rng
from jcrnn.targets import confidence_curve

from helpers import best_matching, brute_overlap, gradient_check, instances, tiny_batch, tiny_model

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic.json"
RUNTIME_LIMIT = 600.0


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, detail


def f1_identity_holds(row):
    p, r = row["precision"], row["recall"]
    want = 2 * p * r / (p + r) if p + r else 0.0
    return abs(row["f1"] - want) <= 1e-15


def pipeline(root, *train_flags):
    """gen, train and eval the JCR and classification-only models; returns timing and reports."""
    t0 = time.perf_counter()
    cfg, data, run = str(CONFIG), str(root / "data"), root / "run"
    assert main(["gen", "--config", cfg, "--out", data]) == 0
    assert main(["train", "--config", cfg, "--data", data, "--out", str(run), *train_flags]) == 0
    assert main(["eval", "--config", cfg, "--checkpoint", str(run / "model.json"), "--data", data,
                 "--out", str(root / "eval_jcr")]) == 0
    seconds = time.perf_counter() - t0
    assert main(["eval", "--config", cfg, "--checkpoint", str(run / "ca.json"), "--data", data,
                 "--out", str(root / "eval_ca")]) == 0
    return {"root": root, "seconds": seconds,
            "jcr": EvalReport.read_json(root / "eval_jcr" / "report.json"),
            "ca": EvalReport.read_json(root / "eval_ca" / "report.json")}


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    return pipeline(tmp_path_factory.mktemp("run_a"))


@pytest.fixture(scope="module")
def second_run(tmp_path_factory):
    return pipeline(tmp_path_factory.mktemp("run_b"))


def test_criterion_1_gradient_check(capsys):
    t0 = time.perf_counter()
    worst_block, worst_where, worst_entry = 0.0, "", 0.0
    for selector in (True, False):
        for lam in (0.0, 1.0, 10.0):
            frames, targets = tiny_batch()
            err, where, _, grads, diffs = gradient_check(tiny_model(use_soft_selector=selector), frames, targets, lam)
            if err > worst_block:
                worst_block, worst_where = err, f"{where} (selector={selector}, lambda={lam})"
            # single entries large enough for central differences to resolve
            for name, g in grads.items():
                fd = diffs[name]
                scale = np.maximum(np.abs(g), np.abs(fd))
                big = scale > 1e-6
                if np.any(big):
                    worst_entry = max(worst_entry, float(np.max(np.abs(g - fd)[big] / scale[big])))
    seconds = time.perf_counter() - t0
    ok = worst_block <= 1e-4 and worst_entry <= 1e-4 and seconds < 30
    verdict(capsys, 1, ok, f"worst block error {worst_block:.2e} at {worst_where}; worst entry error "
                           f"(|g| > 1e-6) {worst_entry:.2e}; {seconds:.1f} s")


def test_criterion_2_target_oracle(capsys):
    rng = Rng(2024)
    worst = 0.0
    anchors_exact = True
    for _ in range(1000):
        n = rng.randint(2, 80)
        anchor = rng.randint(0, n - 1)
        sigma = rng.uniform(0.5, 12.0)
        t = rng.randint(0, n - 1)
        seq = SkeletonSequence(np.zeros((n, 1, 3)), [ActionAnnotation(1, anchor, n)], 1)
        curve = confidence_curve(seq, "start", sigma)
        worst = max(worst, abs(curve[t] - math.exp(-((t - anchor) ** 2) / (2 * sigma ** 2))))
        anchors_exact &= curve[anchor] == 1.0
    verdict(capsys, 2, worst <= 1e-12 and anchors_exact,
            f"max deviation {worst:.1e} over 1000 triples; anchor value exactly 1.0: {anchors_exact}")


def test_criterion_3_metric_oracles(capsys, first_run):
    mismatches = 0
    for dets, gts in instances(seed=11):
        for d in dets:
            for g in gts:
                mismatches += abs(overlap_ratio(d, g) - brute_overlap(d, g)) > 1e-15
        ok = lambda d, g: d.class_id == g.class_id and brute_overlap(d, g) > 0.6
        best = best_matching(dets, gts, ok)
        for k, (p, r, f) in match_and_f1(dets, gts, 0.6, classes=[1, 2]).items():
            tp = sum(1 for i, _ in best if dets[i].class_id == k)
            nd = sum(1 for d in dets if d.class_id == k)
            ng = sum(1 for g in gts if g.class_id == k)
            mismatches += abs(p - (tp / nd if nd else 0.0)) > 1e-15 or abs(r - (tp / ng if ng else 0.0)) > 1e-15
        denom = len(gts) + len(dets) - len(best)
        sl = sum(math.exp(-abs(dets[i].start - gts[j].start) / gts[j].length) for i, j in best)
        el = sum(math.exp(-abs(dets[i].end - gts[j].end) / gts[j].length) for i, j in best)
        want = (sl / denom, el / denom) if denom else (0.0, 0.0)
        got = sl_el_scores(dets, gts, 0.6)
        mismatches += abs(got[0] - want[0]) > 1e-12 or abs(got[1] - want[1]) > 1e-12
        near = lambda d, g: d.class_id == g.class_id and abs(d.start - g.start) <= 4
        tp = len(best_matching(dets, gts, near))
        p = tp / len(dets) if dets else 0.0
        r = tp / len(gts) if gts else 0.0
        mismatches += abs(action_based_f1(dets, gts, 4) - (2 * p * r / (p + r) if p + r else 0.0)) > 1e-15
    reports = [first_run["jcr"], first_run["ca"]]
    identity = all(f1_identity_holds(row) for rep in reports
                   for row in list(rep.per_class.values()) + [rep.action_f1])
    verdict(capsys, 3, mismatches == 0 and identity,
            f"{mismatches} mismatches against brute force on 200 instances; F1 identity in reports: {identity}")


def test_criterion_4_streaming_equivalence(capsys):
    model = Model.init(ModelConfig(input_dim=24, num_classes=3), Rng(5))
    rng = Rng(6)
    identical = 0
    for _ in range(20):
        x = rng.uniform_block(-1.0, 1.0, (rng.randint(5, 60), 24))
        whole, _, _ = forward_sequence(model, x)
        det = OnlineDetector(model)
        for frame in x:
            det.step(frame)
        stream = det.outputs()
        identical += (stream.y.tobytes() == whole.y.tobytes()
                      and stream.p_start.tobytes() == whole.p_start.tobytes()
                      and stream.p_end.tobytes() == whole.p_end.tobytes())
    verdict(capsys, 4, identical == 20, f"{identical}/20 sequences bitwise identical")


def test_criterion_5_end_to_end(capsys, first_run):
    jcr, ca = first_run["jcr"], first_run["ca"]
    checks = {
        "average F1 >= 0.80": jcr.average_f1 >= 0.80,
        "SL, EL >= 0.60": jcr.sl >= 0.60 and jcr.el >= 0.60,
        "JCR SL >= CA SL": jcr.sl >= ca.sl,
        "JCR EL >= CA EL": jcr.el >= ca.el,
        "runtime <= 600 s": first_run["seconds"] <= RUNTIME_LIMIT,
    }
    failed = [k for k, v in checks.items() if not v]
    detail = (f"JCR F1 {jcr.average_f1:.3f} SL {jcr.sl:.3f} EL {jcr.el:.3f}; "
              f"CA F1 {ca.average_f1:.3f} SL {ca.sl:.3f} EL {ca.el:.3f}; {first_run['seconds']:.0f} s"
              + (f"; failed: {', '.join(failed)}" if failed else ""))
    verdict(capsys, 5, not failed, detail)


def test_criterion_6_forecast_sanity(capsys, first_run):
    rows = first_run["jcr"].pr_start
    good = [theta for theta, p, r in rows if p >= 0.5 and r >= 0.2]
    recalls = [r for _, _, r in rows]
    monotone = all(a >= b for a, b in zip(recalls, recalls[1:]))
    verdict(capsys, 6, bool(good) and monotone,
            f"{len(good)} thresholds with precision >= 0.5 and recall >= 0.2 "
            f"(e.g. {good[:3]}); recall non-increasing: {monotone}")


def test_criterion_7_determinism(capsys, first_run, second_run):
    a, b = first_run["root"], second_run["root"]
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "train_log.csv")
    differing = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    checkpoints = sum(1 for f in files if f.suffix == ".json" and f.parts[0] == "run")
    verdict(capsys, 7, not differing and checkpoints >= 3,
            f"{len(files)} files compared ({checkpoints} checkpoints, reports, dumps); "
            f"differing: {differing[:5] or 'none'}; second run {second_run['seconds']:.0f} s")


def test_criterion_8_soft_selector_ablation(capsys, tmp_path_factory):
    root = tmp_path_factory.mktemp("no_selector")
    cfg, data = str(CONFIG), str(root / "data")
    assert main(["gen", "--config", cfg, "--out", data]) == 0
    trained = main(["train", "--config", cfg, "--data", data, "--out", str(root / "run"), "--no-soft-selector"])
    evaluated = main(["eval", "--config", cfg, "--checkpoint", str(root / "run" / "model.json"),
                      "--data", data, "--out", str(root / "eval")])
    report = EvalReport.read_json(root / "eval" / "report.json")
    model = Model.load(root / "run" / "model.json")
    # the selector-off head passes FC2 through; the selector-on head scales every row by y
    cache = ForwardCache()
    model.step(Rng(1).uniform_block(-1, 1, model.input_dim), model.initial_state(), cache=cache)
    _, y, a2, s, _ = cache.heads[0]
    bypassed = not model.config.use_soft_selector and s.tobytes() == a2.tobytes()
    rows = soft_selector(a2, y).reshape(-1, len(y))
    loops = np.array([[a2[i * len(y) + j] * y[j] for j in range(len(y))] for i in range(len(a2) // len(y))])
    selected = np.array_equal(rows, loops)
    ok = trained == 0 and evaluated == 0 and bypassed and selected
    verdict(capsys, 8, ok, f"train exit {trained}, eval exit {evaluated}, average F1 {report.average_f1:.3f} "
                           f"(no target); FC2 passed through unchanged: {bypassed}; selector oracle: {selected}")
