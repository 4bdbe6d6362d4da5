"""Command-line front end: gen, train, eval, stream, pr-curve and bench.

Every command reads one JSON run configuration (``--config``). Unknown keys
are rejected. Exit codes: 0 success, 1 usage or configuration error, 2 data
error, 3 non-finite numbers.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import (DatasetError, SynthConfig, generate, load_split, normalize, normalize_frame,
                      read_frames, save_split, split)
from .evaluation import EvalConfig, EvalReport, SequenceResult, evaluate
from .inference import DetectorConfig, OnlineDetector, detect_sequence
from .network import CheckpointError, Model, ModelConfig
from .numerics import Rng, ShapeError
from .targets import TargetConfig
from .training import NumericError, TrainConfig, train_stage1, train_stage2

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass
class SplitConfig:
    train_fraction: float = 0.6
    seed: int = 0


@dataclass
class ModelSection:
    layer_sizes: list[int] = field(default_factory=lambda: [100, 100, 110, 110, 100, 100])
    fc2_multiplier: int = 10
    use_soft_selector: bool = True
    regression_output_activation: str = "sigmoid"
    init_scale: float = 0.08

    def build(self, input_dim: int, num_classes: int, dropout_p: float = 0.0) -> ModelConfig:
        return ModelConfig(input_dim=input_dim, num_classes=num_classes, dropout_p=dropout_p, **asdict(self))


@dataclass
class PathsConfig:
    data_dir: str = "data"
    out_dir: str = "runs"


@dataclass
class RunConfig:
    seed: int = 0  # model initialization
    synth: SynthConfig = field(default_factory=SynthConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    targets: TargetConfig = field(default_factory=TargetConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc) -> RunConfig:
        if not isinstance(doc, dict):
            raise ConfigError("run configuration must be a JSON object")
        sections = {f.name: f for f in fields(cls)}
        _reject_unknown(doc, sections, "run configuration")
        kwargs = {}
        for name, value in doc.items():
            if name == "seed":
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigError(f"seed must be an integer, got {value!r}")
                kwargs[name] = value
                continue
            section_cls = sections[name].default_factory().__class__
            if not isinstance(value, dict):
                raise ConfigError(f"section {name!r} must be a JSON object")
            _reject_unknown(value, {f.name for f in fields(section_cls)}, f"section {name!r}")
            try:
                kwargs[name] = section_cls(**value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"section {name!r}: {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> RunConfig:
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(doc)


def _reject_unknown(doc: dict, known, where: str) -> None:
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


# --- helpers --------------------------------------------------------------


def _split_dir(data_dir, name: str) -> Path:
    """``data_dir/name`` when it exists, else ``data_dir`` itself."""
    sub = Path(data_dir) / name
    return sub if sub.is_dir() else Path(data_dir)


def _load_nonempty(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory}: no such data directory")
    seqs = load_split(directory)
    if not seqs:
        raise DatasetError(f"{directory}: no *.frames.jsonl sequences found")
    return seqs


def _check_finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{name}: non-finite network output")


def frame_record(t: int, out, events) -> dict:
    """One line of the per-frame JSON Lines stream."""
    return {"t": t, "y": [float(v) for v in out.y], "p_start": float(out.p_start),
            "p_end": float(out.p_end), "events": [e.to_dict() for e in events]}


# --- commands -------------------------------------------------------------


def cmd_gen(cfg: RunConfig, out_dir) -> tuple[int, int]:
    seqs = generate(cfg.synth)
    train, test = split(seqs, cfg.split.train_fraction, cfg.split.seed)
    out_dir = Path(out_dir)
    try:
        save_split(train, out_dir / "train")
        save_split(test, out_dir / "test")
    except OSError as exc:
        raise DatasetError(f"cannot write to {out_dir}: {exc}") from exc
    print(f"wrote {len(train)} train and {len(test)} test sequences to {out_dir}")
    return len(train), len(test)


def cmd_train(cfg: RunConfig, data_dir, out_dir, stage1_only: bool = False,
              no_soft_selector: bool = False) -> Model:
    """Two-stage training. Writes per-stage checkpoints, ``model.json``,
    ``ca.json`` (the stage-1 model with its regression branch off) and
    ``train_log.csv``."""
    seqs = _load_nonempty(_split_dir(data_dir, "train"))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_section = cfg.model
    if no_soft_selector:
        model_section = ModelSection(**{**asdict(cfg.model), "use_soft_selector": False})
    model_cfg = model_section.build(seqs[0].input_dim, seqs[0].num_classes, cfg.train.dropout_p)
    model = Model.init(model_cfg, Rng(cfg.seed))
    model, log1 = train_stage1(model, seqs, cfg.train, cfg.targets, checkpoint_dir=out_dir)
    ca = model.classification_only()
    ca.save(out_dir / "ca.json")
    log1.write_csv(out_dir / "train_log.csv")
    if stage1_only:
        ca.save(out_dir / "model.json")
        return ca
    model, log2 = train_stage2(model, seqs, cfg.train, cfg.targets, checkpoint_dir=out_dir)
    log2.write_csv(out_dir / "train_log.csv", append=True)
    model.save(out_dir / "model.json")
    return model


def _load_model(checkpoint, input_dim: int | None = None) -> Model:
    model = Model.load(checkpoint)
    if input_dim is not None and model.input_dim != input_dim:
        raise ShapeError(f"checkpoint expects {model.input_dim} features per frame, data has {input_dim}")
    return model


def cmd_eval(cfg: RunConfig, checkpoint, data_dir, out_dir, oracle: bool = False) -> EvalReport:
    """Detect on every test sequence; writes ``report.json``, ``pr.csv``,
    ``confusion.csv`` and per-frame dumps under ``frames/``."""
    seqs = _load_nonempty(_split_dir(data_dir, "test"))
    model = _load_model(checkpoint, seqs[0].input_dim)
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    results = []
    for seq in seqs:
        det = OnlineDetector(model, cfg.detector)
        with open(out_dir / "frames" / f"{seq.name}.jsonl", "w") as fh:
            for t, x in enumerate(normalize(seq).features()):
                out, events = det.step(x)
                _check_finite(seq.name, out.y, [out.p_start, out.p_end])
                fh.write(json.dumps(frame_record(t, out, events)) + "\n")
        outputs = det.outputs()
        detections = list(seq.annotations) if oracle else det.finalize()
        results.append(SequenceResult(list(seq.annotations), detections, list(det.events),
                                      outputs.y, outputs.p_start, outputs.p_end))
    report = evaluate(results, seqs[0].num_classes, cfg.eval)
    report.write_json(out_dir / "report.json")
    report.write_pr_csv(out_dir / "pr.csv")
    report.write_confusion_csv(out_dir / "confusion.csv")
    with open(out_dir / "detections.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "class", "start", "end"])
        for seq, r in zip(seqs, results):
            for d in r.detections:
                w.writerow([seq.name, d.class_id, d.start, d.end])
    print(f"average F1 {report.average_f1:.4f}  SL {report.sl:.4f}  EL {report.el:.4f}")
    return report


def cmd_stream(cfg: RunConfig, checkpoint, frames_file, realtime: float | None = None, out=None) -> int:
    """Emit one JSON line per frame, in arrival order."""
    out = out or sys.stdout
    frames = read_frames(frames_file)
    model = _load_model(checkpoint, frames.shape[1] * 3)
    det = OnlineDetector(model, cfg.detector)
    period = 1.0 / realtime if realtime else 0.0
    t0 = time.perf_counter()
    for t, joints in enumerate(frames):
        res, events = det.step(joints)
        _check_finite(str(frames_file), res.y, [res.p_start, res.p_end])
        if period:
            delay = t0 + t * period - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        out.write(json.dumps(frame_record(t, res, events)) + "\n")
    out.flush()
    return len(frames)


def cmd_pr_curve(report_path, out_path) -> None:
    try:
        report = EvalReport.read_json(report_path)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise DatasetError(f"cannot read report {report_path}: {exc}") from exc
    report.write_pr_csv(out_path)


def cmd_bench(cfg: RunConfig, checkpoint, frames_file, runs: int = 3) -> dict:
    """Mean per-frame latency and throughput over ``runs`` timed passes after one warm-up."""
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    frames = read_frames(frames_file)
    model = _load_model(checkpoint, frames.shape[1] * 3)
    feats = np.stack([normalize_frame(f).ravel() for f in frames])
    detect_sequence(model, feats, cfg.detector)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        detect_sequence(model, feats, cfg.detector)
        times.append(time.perf_counter() - t0)
    per_run_fps = [len(frames) / s for s in times]
    result = {"frames": len(frames), "runs": runs,
              "mean_latency_ms": 1000.0 * float(np.mean(times)) / len(frames),
              "fps": float(np.mean(per_run_fps)), "fps_per_run": per_run_fps}
    print(json.dumps(result))
    return result


# --- entry point ----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jcrnn", description="Online action detection with a joint classification-regression RNN.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic train/test dataset")
    g.add_argument("--config")
    g.add_argument("--out", help="output directory (default paths.data_dir)")

    t = sub.add_parser("train", help="two-stage training")
    t.add_argument("--config")
    t.add_argument("--data", help="dataset directory (default paths.data_dir)")
    t.add_argument("--out", help="output directory (default paths.out_dir)")
    t.add_argument("--stage1-only", action="store_true", help="stop after stage 1; model.json is classification-only")
    t.add_argument("--no-soft-selector", action="store_true", help="feed FC2 straight into FC3")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("--config")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--out", required=True)
    e.add_argument("--oracle", action="store_true", help="debug: score the ground truth as detections")

    s = sub.add_parser("stream", help="run the online detector over a frames file, JSON Lines to stdout")
    s.add_argument("--config")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--realtime", type=float, metavar="FPS", help="pace output at this frame rate")

    r = sub.add_parser("pr-curve", help="extract forecast PR curves from a report as CSV")
    r.add_argument("--report", required=True)
    r.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="inference throughput")
    b.add_argument("--config")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--frames", required=True)
    b.add_argument("--runs", type=int, default=3)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "pr-curve":
            cmd_pr_curve(args.report, args.out)
            return EXIT_OK
        cfg = RunConfig.load(args.config)
        if args.command == "gen":
            cmd_gen(cfg, args.out or cfg.paths.data_dir)
        elif args.command == "train":
            cmd_train(cfg, args.data or cfg.paths.data_dir, args.out or cfg.paths.out_dir,
                      args.stage1_only, args.no_soft_selector)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.data or cfg.paths.data_dir, args.out, args.oracle)
        elif args.command == "stream":
            cmd_stream(cfg, args.checkpoint, args.frames, args.realtime)
        elif args.command == "bench":
            cmd_bench(cfg, args.checkpoint, args.frames, args.runs)
    except ConfigError as exc:
        print(f"jcrnn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"jcrnn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, CheckpointError, ShapeError, OSError) as exc:
        print(f"jcrnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
