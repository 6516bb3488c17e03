"""Contrastive loss checked against a naive double-loop implementation."""

import math

import numpy as np
import pytest

from protoword.errors import ValidationError
from protoword.scl import scl_loss


def naive_scl(anchors, labels, tau):
    """Direct summation, no vectorization, no log-space tricks."""
    x = np.asarray(anchors, dtype=np.float64)
    z = x / np.linalg.norm(x, axis=1, keepdims=True)
    n = len(z)
    loss = 0.0
    skipped = 0
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            skipped += 1
            continue
        others = [a for a in range(n) if a != i]
        denom = sum(math.exp(float(z[i] @ z[a]) / tau) for a in others)
        inner = 0.0
        for p in positives:
            inner += math.log(math.exp(float(z[i] @ z[p]) / tau) / denom)
        loss += -inner / len(positives)
    return loss, skipped


def random_case(rng, n=None, d=None, classes=None):
    n = n or int(rng.integers(2, 9))
    d = d or int(rng.integers(2, 6))
    classes = classes or int(rng.integers(1, 4))
    x = rng.standard_normal((n, d))
    labels = rng.integers(0, classes, size=n)
    return x, labels


def test_loss_matches_direct_summation():
    rng = np.random.default_rng(5)
    for _ in range(300):
        x, labels = random_case(rng)
        tau = float(rng.uniform(0.05, 1.0))
        got = scl_loss(x, labels, tau)
        want_loss, want_skipped = naive_scl(x, labels, tau)
        assert got.loss == pytest.approx(want_loss, abs=1e-9)
        assert got.skipped == want_skipped


def test_two_identical_same_label_anchors_give_zero():
    x = np.tile(np.array([1.0, 2.0, -1.0]), (2, 1))
    res = scl_loss(x, np.array([4, 4]), tau=0.07)
    assert res.loss == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("n", [2, 3, 4, 7])
def test_identical_same_label_anchors_closed_form(n):
    # All pairwise similarities equal: each anchor contributes log(n-1).
    x = np.tile(np.array([0.3, -1.2, 0.5, 2.0]), (n, 1))
    res = scl_loss(x, np.zeros(n, dtype=int), tau=0.07)
    assert res.loss == pytest.approx(n * math.log(n - 1) if n > 1 else 0.0, abs=1e-9)


def test_anchors_without_positives_are_skipped():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((4, 3))
    res = scl_loss(x, np.array([0, 1, 2, 3]), tau=0.07)
    assert res.loss == 0.0
    assert res.skipped == 4
    assert np.allclose(res.grad_anchors, 0.0)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(13)
    h = 1e-4
    for _ in range(100):
        x, labels = random_case(rng)
        tau = float(rng.uniform(0.05, 0.8))
        grad = scl_loss(x, labels, tau).grad_anchors
        num = np.zeros_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                up = x.copy()
                up[i, j] += h
                down = x.copy()
                down[i, j] -= h
                num[i, j] = (scl_loss(up, labels, tau).loss - scl_loss(down, labels, tau).loss) / (2 * h)
        err = np.abs(grad - num)
        scale = np.maximum(np.abs(grad), np.abs(num))
        assert bool(np.all((err <= 1e-6) | (err <= 1e-4 * scale)))


def test_gradient_is_scale_invariant_along_anchor_direction():
    # The loss depends only on directions, so the radial derivative is zero:
    # scaling one anchor leaves the loss unchanged.
    rng = np.random.default_rng(17)
    x, labels = random_case(rng, n=6, d=4, classes=2)
    base = scl_loss(x, labels, 0.07).loss
    scaled = x.copy()
    scaled[2] *= 3.7
    assert scl_loss(scaled, labels, 0.07).loss == pytest.approx(base, abs=1e-9)
    grad = scl_loss(x, labels, 0.07).grad_anchors
    assert float(grad[2] @ x[2]) == pytest.approx(0.0, abs=1e-9)


def test_validation_errors():
    with pytest.raises(ValidationError):
        scl_loss(np.zeros((1, 3)), np.array([0]), 0.07)  # N < 2
    with pytest.raises(ValidationError):
        scl_loss(np.ones((3, 2)), np.array([0, 1]), 0.07)  # label length mismatch
    with pytest.raises(ValidationError):
        scl_loss(np.ones((2, 2)), np.array([0, 0]), 0.0)  # tau must be positive
    bad = np.ones((2, 2))
    bad[1] = 0.0
    with pytest.raises(ValidationError):
        scl_loss(bad, np.array([0, 0]), 0.07)  # zero-norm anchor
