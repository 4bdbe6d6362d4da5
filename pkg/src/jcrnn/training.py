"""Two-stage SGD-with-momentum training.

Stage 1 fits the classification path only (lambda = 0, unshifted labels).
Stage 2 fine-tunes the whole network on the joint objective with forecast
shifted labels and lambda ramped linearly up to ``lambda_max``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import targets as tgt
from .dataset import SkeletonSequence, normalize
from .network import Model, ShapeError, backward_sequence, forward_sequence
from .numerics import Rng

log = logging.getLogger(__name__)

LOG_CLAMP = math.log(1e-12)


class NumericError(FloatingPointError):
    """A NaN or Inf appeared in a loss, gradient or parameter."""


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    epochs_stage1: int = 40
    epochs_stage2: int = 40
    lambda_max: float = 10.0
    dropout_p: float = 0.25
    max_bptt_len: int = 200
    grad_clip: float = 5.0
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lambda_max < 0:
            raise ValueError(f"lambda_max must be >= 0, got {self.lambda_max}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.max_bptt_len < 1 or self.grad_clip <= 0:
            raise ValueError("max_bptt_len and grad_clip must be positive")


@dataclass
class EpochRecord:
    epoch: int
    ce_loss: float
    reg_loss: float
    lam: float
    seconds: float


@dataclass
class TrainLog:
    stage: str = ""
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def write_csv(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if not append:
                w.writerow(["stage", "epoch", "ce_loss", "reg_loss", "lambda", "seconds"])
            for r in self.records:
                w.writerow([self.stage, r.epoch, repr(r.ce_loss), repr(r.reg_loss), repr(r.lam), f"{r.seconds:.3f}"])


class OptimizerState:
    def __init__(self, model: Model):
        self.velocity = {k: np.zeros_like(v) for k, v in model.params.items()}


def loss_classification(outputs, targets) -> float:
    """Mean frame-wise cross-entropy, with ln clamped at ln(1e-12)."""
    if len(outputs) != len(targets):
        raise ShapeError(f"{len(outputs)} outputs vs {len(targets)} targets")
    with np.errstate(divide="ignore"):
        logy = np.maximum(np.log(outputs.y), LOG_CLAMP)
    return float(-np.sum(targets.z * logy) / len(targets))


def loss_regression(outputs, targets) -> float:
    if len(outputs) != len(targets):
        raise ShapeError(f"{len(outputs)} outputs vs {len(targets)} targets")
    ds = outputs.p_start - targets.c_start
    de = outputs.p_end - targets.c_end
    return float(np.sum(ds * ds + de * de) / len(targets))


def loss_joint(outputs, targets, lam: float) -> tuple[float, float, float]:
    """Returns ``(total, ce, reg)`` with ``total = ce + lam * reg``."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    ce = loss_classification(outputs, targets)
    reg = loss_regression(outputs, targets)
    return ce + lam * reg, ce, reg


def sgd_step(model: Model, grads: dict, opt: OptimizerState, lr: float, momentum: float,
             grad_clip: float) -> float:
    """Clip by global L2 norm, then ``v = momentum*v - lr*g; theta += v``. Returns the pre-clip norm."""
    for name, g in grads.items():
        if g.shape != model.params[name].shape:
            raise ShapeError(f"gradient {name} has shape {g.shape}, parameter has {model.params[name].shape}")
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not math.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    scale = grad_clip / norm if norm > grad_clip else 1.0
    for name, g in grads.items():
        v = opt.velocity[name]
        v *= momentum
        v -= lr * (g * scale if scale != 1.0 else g)
        model.params[name] += v
    return norm


def lambda_schedule(epoch: int, epochs: int, lambda_max: float) -> float:
    """Linear ramp; ``epoch`` counts from 1 and the last epoch uses ``lambda_max``."""
    return lambda_max * epoch / epochs


def _chunks(n: int, max_len: int):
    for lo in range(0, n, max_len):
        yield lo, min(n, lo + max_len)


def _run_epoch(model: Model, opt: OptimizerState, data, cfg: TrainConfig, lam: float, rng: Rng):
    ce_sum = reg_sum = 0.0
    n_frames = 0
    for i in rng.shuffle(list(range(len(data)))):
        feats, seq_targets = data[i]
        state = None
        for lo, hi in _chunks(len(feats), cfg.max_bptt_len):
            chunk_targets = seq_targets.slice(lo, hi)
            out, cache, state = forward_sequence(model, feats[lo:hi], "train", rng, state, cfg.dropout_p)
            _, ce, reg = loss_joint(out, chunk_targets, lam)
            if not (math.isfinite(ce) and math.isfinite(reg)):
                raise NumericError("non-finite loss")
            grads = backward_sequence(model, cache, chunk_targets, lam)
            sgd_step(model, grads, opt, cfg.lr, cfg.momentum, cfg.grad_clip)
            ce_sum += ce * (hi - lo)
            reg_sum += reg * (hi - lo)
            n_frames += hi - lo
    return ce_sum / n_frames, reg_sum / n_frames


def prepare(sequences, target_cfg: tgt.TargetConfig):
    return [(normalize(seq).features(), tgt.build(seq, target_cfg)) for seq in sequences]


def _train(model, sequences, cfg, target_cfg, stage, epochs, lam_fn, rng, checkpoint_dir):
    if not sequences:
        raise ValueError("empty training set")
    data = prepare(sequences, target_cfg)
    opt = OptimizerState(model)
    log_ = TrainLog(stage)
    for epoch in range(1, epochs + 1):
        lam = lam_fn(epoch)
        t0 = time.perf_counter()
        ce, reg = _run_epoch(model, opt, data, cfg, lam, rng)
        log_.records.append(EpochRecord(epoch, ce, reg, lam, time.perf_counter() - t0))
        log.info("%s epoch %d: ce=%.4f reg=%.4f lambda=%.2f", stage, epoch, ce, reg, lam)
        if checkpoint_dir is not None and (
                epoch == epochs or cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0):
            model.save(Path(checkpoint_dir) / f"{stage}-{epoch}.json")
    return model, log_


def train_stage1(model: Model, sequences: list[SkeletonSequence], cfg: TrainConfig,
                 target_cfg: tgt.TargetConfig | None = None, rng: Rng | None = None,
                 checkpoint_dir=None, fit_normalization: bool = True):
    """Classification-only training; labels carry no forecast shift.

    By default the model's input standardization is first fitted to the
    training frames.
    """
    target_cfg = target_cfg or tgt.TargetConfig()
    if fit_normalization and sequences:
        model.fit_input_normalization([normalize(s).features() for s in sequences])
    stage1_targets = tgt.TargetConfig(sigma=target_cfg.sigma, horizon_T=0)
    rng = rng or Rng(cfg.seed)
    return _train(model, sequences, cfg, stage1_targets, "stage1", cfg.epochs_stage1,
                  lambda epoch: 0.0, rng, checkpoint_dir)


def train_stage2(model: Model, sequences: list[SkeletonSequence], cfg: TrainConfig,
                 target_cfg: tgt.TargetConfig | None = None, rng: Rng | None = None,
                 checkpoint_dir=None):
    """Joint fine-tuning with lambda ramped linearly to ``lambda_max``."""
    target_cfg = target_cfg or tgt.TargetConfig()
    rng = rng or Rng(cfg.seed + 1)
    epochs = cfg.epochs_stage2
    return _train(model, sequences, cfg, target_cfg, "stage2", epochs,
                  lambda epoch: lambda_schedule(epoch, epochs, cfg.lambda_max), rng, checkpoint_dir)


def evaluate_loss(model: Model, sequences, target_cfg: tgt.TargetConfig, lam: float = 0.0):
    """Frame-weighted mean ``(total, ce, reg)`` in infer mode."""
    tot = ce_sum = reg_sum = 0.0
    n = 0
    for feats, seq_targets in prepare(sequences, target_cfg):
        out, _, _ = forward_sequence(model, feats, "infer")
        total, ce, reg = loss_joint(out, seq_targets, lam)
        tot += total * len(feats)
        ce_sum += ce * len(feats)
        reg_sum += reg * len(feats)
        n += len(feats)
    return tot / n, ce_sum / n, reg_sum / n
