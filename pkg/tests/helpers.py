"""Shared fixtures-by-function for the test modules."""

import itertools

import numpy as np

from jcrnn.dataset import ActionAnnotation as Iv
from jcrnn.network import Model, ModelConfig, backward_sequence, forward_sequence
from jcrnn.numerics import Rng
from jcrnn.targets import SequenceTargets, one_hot
from jcrnn.training import loss_joint


def tiny_model(use_soft_selector=True, dropout_p=0.3, seed=1):
    """Input dim 6 (two joints), every layer of size 3, M=2.

    Weights are pushed to order one so that every gradient entry is large
    enough for central differences to resolve.
    """
    cfg = ModelConfig(input_dim=6, num_classes=2, layer_sizes=(3,) * 6,
                      use_soft_selector=use_soft_selector, dropout_p=dropout_p)
    model = Model.init(cfg, Rng(seed))
    jitter = Rng(seed + 4)
    for name in model.params:
        model.params[name] = model.params[name] + jitter.uniform_block(-1.0, 1.0, model.params[name].shape)
    return model


def tiny_batch(seed=3):
    """Five frames visiting every class, with random confidence targets."""
    n = 5
    rng = Rng(seed)
    frames = rng.uniform_block(-1.0, 1.0, (n, 6))
    labels = np.array([0, 1, 2, 1, 0])
    targets = SequenceTargets(labels, one_hot(labels, 2), rng.random_block(n), rng.random_block(n))
    return frames, targets


def gradient_check(model, frames, targets, lam, eps=1e-5, mask_seed=9):
    """Per-block relative error between analytic and central-difference gradients.

    For each parameter block the error is ``|g - fd| / max(|g|, |fd|)`` in
    the Euclidean norm; blocks where both vanish count as exact. Single
    entries can be as small as 1e-8, below what central differences at
    ``eps`` resolve, so the block norm is the meaningful comparison. The
    dropout masks are regenerated from the same seed on every forward pass
    so the loss is a fixed deterministic function of the weights.

    Returns ``(worst block error, worst block name, per-block errors, grads,
    finite differences)``.
    """
    def loss():
        out, _, _ = forward_sequence(model, frames, "train", Rng(mask_seed))
        return loss_joint(out, targets, lam)[0]

    _, cache, _ = forward_sequence(model, frames, "train", Rng(mask_seed))
    grads = backward_sequence(model, cache, targets, lam)
    errors, diffs = {}, {}
    for name, p in model.params.items():
        fd = diffs[name] = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up = loss()
            p[idx] = orig - eps
            down = loss()
            p[idx] = orig
            fd[idx] = (up - down) / (2 * eps)
        scale = max(np.linalg.norm(fd), np.linalg.norm(grads[name]))
        errors[name] = 0.0 if scale == 0.0 else float(np.linalg.norm(fd - grads[name]) / scale)
    worst = max(errors, key=errors.get)
    return errors[worst], worst, errors, grads, diffs


# --- brute-force metric oracles -------------------------------------------


def frames(iv):
    return set(range(iv.start, iv.end))


def brute_overlap(a, b):
    fa, fb = frames(a), frames(b)
    return len(fa & fb) / len(fa | fb)


def brute_matchings(dets, gts, ok):
    """Every one-to-one assignment of detections to ground truth (or to nobody)."""
    slots = list(range(len(gts))) + [None] * len(dets)
    seen = set()
    for perm in itertools.permutations(slots, len(dets)):
        if perm in seen:
            continue
        seen.add(perm)
        if all(j is None or ok(dets[i], gts[j]) for i, j in enumerate(perm)):
            yield [(i, j) for i, j in enumerate(perm) if j is not None]


def best_matching(dets, gts, ok):
    return max(brute_matchings(dets, gts, ok), key=len)


def random_intervals(rng, n_max, min_len, max_len, classes, horizon=80):
    out, t = [], rng.randint(0, 6)
    for _ in range(rng.randint(0, n_max)):
        length = rng.randint(min_len, max_len)
        if t + length > horizon:
            break
        out.append(Iv(rng.randint(1, classes), t, t + length))
        t += length + rng.randint(0, 8)
    return out


def instances(n=200, seed=0):
    rng = Rng(seed)
    for _ in range(n):
        # ground truth never overlaps and is at least 9 frames long, so no two
        # starts lie within twice the action-F1 tolerance of each other
        gts = random_intervals(rng, 4, 9, 20, 2)
        dets = random_intervals(rng, 4, 1, 20, 2)
        yield dets, gts
