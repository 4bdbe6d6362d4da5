import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jcrnn.dataset import ActionAnnotation, SkeletonSequence
from jcrnn.numerics import Rng
from jcrnn.targets import (
    TargetConfig,
    anchors,
    build,
    class_labels,
    confidence_curve,
    gaussian_confidence,
    one_hot,
)


def seq_with(n, actions, m=3):
    return SkeletonSequence(np.zeros((n, 2, 3)), [ActionAnnotation(*a) for a in actions], m)


def direct_confidence(t, anchor_list, sigma):
    # scalar reimplementation: nearest anchor by absolute distance, earlier wins ties
    best = None
    for a in anchor_list:
        if best is None or abs(t - a) < abs(t - best):
            best = a
    return math.exp(-((t - best) ** 2) / (2.0 * sigma ** 2))


class TestClassLabels:
    def test_enumerated_window(self):
        labels = class_labels(seq_with(40, [(2, 20, 30)]), 10)
        assert labels[9] == 0 and labels[30] == 0
        assert np.all(labels[10:30] == 2)

    def test_zero_horizon_is_membership(self):
        seq = seq_with(40, [(1, 3, 9), (2, 15, 22)])
        np.testing.assert_array_equal(class_labels(seq, 0), seq.frame_labels())

    def test_empty(self):
        assert np.all(class_labels(seq_with(10, []), 10) == 0)

    def test_window_yields_to_earlier_body(self):
        labels = class_labels(seq_with(40, [(1, 2, 12), (3, 15, 25)]), 10)
        assert np.all(labels[2:12] == 1)
        assert np.all(labels[12:25] == 3)

    def test_window_clipped_at_sequence_start(self):
        labels = class_labels(seq_with(20, [(1, 4, 8)]), 10)
        assert np.all(labels[:8] == 1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6), st.integers(0, 15))
    def test_annotated_frames_never_relabeled(self, seed, horizon):
        rng = Rng(seed)
        actions, t = [], rng.randint(0, 5)
        while True:
            length = rng.randint(1, 8)
            if t + length > 60:
                break
            actions.append((rng.randint(1, 3), t, t + length))
            t += length + rng.randint(0, 6)
        seq = seq_with(60, actions)
        raw = seq.frame_labels()
        shifted = class_labels(seq, horizon)
        inside = raw != 0
        np.testing.assert_array_equal(shifted[inside], raw[inside])


class TestConfidence:
    def test_anchor_is_exactly_one(self):
        c = confidence_curve(seq_with(30, [(1, 10, 20)]), "start", 5.0)
        assert c[10] == 1.0

    def test_end_anchor_is_last_action_frame(self):
        seq = seq_with(30, [(1, 10, 20)])
        c = confidence_curve(seq, "end", 5.0)
        assert c[19] == 1.0
        assert anchors(seq, "end").tolist() == [19]

    def test_one_sigma(self):
        c = confidence_curve(seq_with(30, [(1, 10, 20)]), "start", 5.0)
        assert abs(c[15] - 0.606531) < 1e-6
        assert c[5] == c[15]

    def test_no_actions_gives_zero(self):
        assert np.all(gaussian_confidence(15, [], 5.0) == 0.0)

    def test_tie_goes_to_earlier_anchor(self):
        c = gaussian_confidence(20, [4, 10], 2.0)
        assert c[7] == math.exp(-9 / 8)

    def test_random_triples_match_direct_formula(self):
        rng = Rng(17)
        for _ in range(1000):
            n = rng.randint(1, 60)
            k = rng.randint(1, 3)
            anchor_list = sorted({rng.randint(0, n - 1) for _ in range(k)})
            sigma = rng.uniform(0.5, 10.0)
            t = rng.randint(0, n - 1)
            got = gaussian_confidence(n, anchor_list, sigma)[t]
            assert abs(got - direct_confidence(t, anchor_list, sigma)) <= 1e-12

    def test_argmax_near_isolated_anchor(self):
        c = gaussian_confidence(100, [50], 5.0)
        assert int(np.argmax(c[35:66])) + 35 == 50

    def test_symmetric_to_midpoint(self):
        c = gaussian_confidence(100, [30, 60], 5.0)
        for d in range(15):
            assert c[30 - d] == c[30 + d]

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            gaussian_confidence(5, [1], 0.0)
        with pytest.raises(ValueError):
            TargetConfig(sigma=-1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 80), st.lists(st.integers(0, 79), min_size=1, max_size=4), st.floats(0.5, 8.0))
    def test_doubling_sigma_never_decreases(self, n, anchor_list, sigma):
        anchor_list = sorted({a for a in anchor_list if a < n}) or [0]
        narrow = gaussian_confidence(n, anchor_list, sigma)
        wide = gaussian_confidence(n, anchor_list, 2 * sigma)
        assert np.all(wide >= narrow)
        assert np.all((narrow >= 0) & (narrow <= 1))


class TestBuild:
    def test_hand_table(self):
        # one action of class 1 on frames 5..8, horizon 2, sigma 2
        seq = seq_with(12, [(1, 5, 9)], m=2)
        tg = build(seq, TargetConfig(sigma=2.0, horizon_T=2))
        assert tg.labels.tolist() == [0, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0]
        expected_start = [math.exp(-((t - 5) ** 2) / 8.0) for t in range(12)]
        expected_end = [math.exp(-((t - 8) ** 2) / 8.0) for t in range(12)]
        np.testing.assert_allclose(tg.c_start, expected_start, rtol=0, atol=1e-15)
        np.testing.assert_allclose(tg.c_end, expected_end, rtol=0, atol=1e-15)
        assert tg[3].label == 1 and tg[9].label == 0
        assert np.all(tg.z.sum(axis=1) == 1.0)

    def test_all_blank(self):
        tg = build(seq_with(8, []))
        assert np.all(tg.labels == 0)
        assert np.all(tg.c_start == 0) and np.all(tg.c_end == 0)
        assert np.all(tg.z[:, 0] == 1.0)

    def test_slice(self):
        tg = build(seq_with(20, [(2, 5, 12)]))
        part = tg.slice(4, 9)
        assert len(part) == 5
        np.testing.assert_array_equal(part.c_start, tg.c_start[4:9])

    def test_one_hot(self):
        np.testing.assert_array_equal(one_hot(np.array([0, 2]), 2), [[1, 0, 0], [0, 0, 1]])
