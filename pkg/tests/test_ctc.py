"""Alignment loss checked against brute-force path enumeration and finite differences."""

import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from protoword.ctc import ctc_loss, greedy_decode, min_frames
from protoword.errors import AlignmentInfeasibleError, ValidationError


def collapse(path, blank):
    out = []
    prev = None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return [p for p in out if p != blank]


def brute_loss(logits, target, blank):
    """-log sum of path probabilities over every path that collapses to target."""
    lp = logits - logsumexp(logits, axis=1, keepdims=True)
    t_len, v = logits.shape
    total = -np.inf
    for path in itertools.product(range(v), repeat=t_len):
        if collapse(path, blank) == list(target):
            total = np.logaddexp(total, sum(lp[t, path[t]] for t in range(t_len)))
    return -total


def random_case(rng):
    t_len = int(rng.integers(1, 5))
    v = int(rng.integers(2, 4))
    blank = v - 1
    max_target = min(2, v - 1)
    target = [int(rng.integers(0, v - 1)) for _ in range(int(rng.integers(1, max_target + 1)))]
    logits = rng.standard_normal((t_len, v)) * 2.0
    return logits, target, blank


def test_loss_matches_brute_force_enumeration():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 200:
        logits, target, blank = random_case(rng)
        if logits.shape[0] < min_frames(target):
            continue
        got = ctc_loss(logits, target, blank).loss
        want = brute_loss(logits, target, blank)
        assert got == pytest.approx(want, abs=1e-6)
        checked += 1


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(11)
    h = 1e-4
    checked = 0
    while checked < 100:
        logits, target, blank = random_case(rng)
        if logits.shape[0] < min_frames(target):
            continue
        grad = ctc_loss(logits, target, blank).grad_logits
        num = np.zeros_like(logits)
        for i in range(logits.shape[0]):
            for j in range(logits.shape[1]):
                up = logits.copy()
                up[i, j] += h
                down = logits.copy()
                down[i, j] -= h
                num[i, j] = (ctc_loss(up, target, blank).loss - ctc_loss(down, target, blank).loss) / (2 * h)
        err = np.abs(grad - num)
        scale = np.maximum(np.abs(grad), np.abs(num))
        assert bool(np.all((err <= 1e-6) | (err <= 1e-4 * scale)))
        checked += 1


def test_known_single_frame_case():
    # T=1, uniform logits over 2 symbols: P(target) = 0.5.
    logits = np.zeros((1, 2))
    res = ctc_loss(logits, [0], blank_id=1)
    assert res.loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_loss_is_nonnegative_and_prob_at_most_one():
    rng = np.random.default_rng(23)
    for _ in range(50):
        logits, target, blank = random_case(rng)
        if logits.shape[0] < min_frames(target):
            continue
        loss = ctc_loss(logits, target, blank).loss
        assert loss >= 0.0
        assert np.exp(-loss) <= 1.0 + 1e-12


def test_min_frames_counts_repeats():
    assert min_frames([0]) == 1
    assert min_frames([0, 1]) == 2
    assert min_frames([0, 0]) == 3  # repeat needs a separating blank
    assert min_frames([0, 0, 1, 1]) == 6


def test_infeasible_target_raises():
    logits = np.zeros((2, 3))
    with pytest.raises(AlignmentInfeasibleError):
        ctc_loss(logits, [0, 0], blank_id=2)


def test_validation_errors():
    logits = np.zeros((3, 3))
    with pytest.raises(ValidationError):
        ctc_loss(logits, [], blank_id=2)
    with pytest.raises(ValidationError):
        ctc_loss(logits, [2], blank_id=2)  # blank in target
    with pytest.raises(ValidationError):
        ctc_loss(logits, [5], blank_id=2)  # out of range
    with pytest.raises(ValidationError):
        ctc_loss(np.zeros((3,)), [0], blank_id=2)
    bad = logits.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValidationError):
        ctc_loss(bad, [0], blank_id=2)


def test_grad_rows_sum_to_zero():
    # Softmax minus a distribution over symbols: each frame's gradient sums to 0.
    rng = np.random.default_rng(3)
    for _ in range(20):
        logits, target, blank = random_case(rng)
        if logits.shape[0] < min_frames(target):
            continue
        grad = ctc_loss(logits, target, blank).grad_logits
        assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-10)


def test_greedy_decode_collapses_and_drops_blanks():
    blank = 2
    logits = np.array(
        [
            [5.0, 0.0, 0.0],  # 0
            [5.0, 0.0, 0.0],  # 0 repeat, collapses
            [0.0, 0.0, 5.0],  # blank
            [0.0, 5.0, 0.0],  # 1
            [5.0, 0.0, 0.0],  # 0 again after break
        ]
    )
    assert greedy_decode(logits, blank) == [0, 1, 0]


def test_greedy_decode_tie_prefers_smallest_id():
    logits = np.zeros((1, 4))  # all equal
    assert greedy_decode(logits, blank_id=3) == [0]


def test_greedy_decode_all_blanks_is_empty():
    logits = np.tile(np.array([0.0, 0.0, 9.0]), (4, 1))
    assert greedy_decode(logits, blank_id=2) == []
