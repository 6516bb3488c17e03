"""Alignment-free sequence loss over blank-augmented paths, with exact gradients.

The loss is the negative log probability of every frame-level path that
collapses (merge repeats, then drop blanks) to the target sequence. It is
computed with the forward-backward recursion over the blank-interleaved
target, entirely in log space; the logit gradient is softmax minus the
per-frame symbol posterior, so each gradient row sums to zero.

The recursion runs over a [T x S] lattice with S = 2*|target|+1, which at
this library's scale is tiny; scalar Python loops beat array ops on it by
a wide margin, so the lattice math deliberately avoids numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentInfeasibleError, ValidationError

NEG_INF = -math.inf


@dataclass
class CtcResult:
    loss: float
    grad_logits: np.ndarray


def min_frames(target) -> int:
    """Shortest frame count that can realize the target: |target| plus one
    separating blank per adjacent repeat."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _validate(logits: np.ndarray, target: list[int], blank_id: int) -> None:
    if logits.ndim != 2 or logits.shape[0] < 1 or logits.shape[1] < 2:
        raise ValidationError("logits must be a [T x V] matrix with V >= 2")
    if not np.isfinite(logits).all():
        raise ValidationError("logits contain non-finite values")
    if not 0 <= blank_id < logits.shape[1]:
        raise ValidationError(f"blank_id {blank_id} out of range")
    if not target:
        raise ValidationError("target must be nonempty")
    for sym in target:
        if not 0 <= sym < logits.shape[1]:
            raise ValidationError(f"target symbol {sym} out of range")
        if sym == blank_id:
            raise ValidationError("target must not contain the blank symbol")
    needed = min_frames(target)
    if logits.shape[0] < needed:
        raise AlignmentInfeasibleError(
            f"{logits.shape[0]} frames cannot align a target needing {needed}"
        )


def _extend_target(target: list[int], blank_id: int) -> list[int]:
    """Blank-interleaved target: [blank, t0, blank, t1, ..., blank]."""
    ext = [blank_id] * (2 * len(target) + 1)
    ext[1::2] = target
    return ext


def _skip_flags(ext: list[int], blank_id: int) -> list[bool]:
    """skip[s]: a path may jump from state s-2 straight to state s."""
    return [
        s >= 2 and ext[s] != blank_id and ext[s] != ext[s - 2]
        for s in range(len(ext))
    ]


def _logaddexp(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def _alpha_beta(lpe: list[list[float]], skip: list[bool]):
    """Forward/backward state scores for extended-target log probs lpe [T x S].

    alpha[t][s] includes the emission at t; beta[t][s] excludes it, so
    alpha + beta scores complete paths through (t, s).
    """
    t_len = len(lpe)
    s_len = len(lpe[0])
    alpha = [[NEG_INF] * s_len for _ in range(t_len)]
    alpha[0][0] = lpe[0][0]
    if s_len > 1:
        alpha[0][1] = lpe[0][1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        row = alpha[t]
        em = lpe[t]
        for s in range(s_len):
            acc = prev[s]
            if s >= 1:
                acc = _logaddexp(acc, prev[s - 1])
            if s >= 2 and skip[s]:
                acc = _logaddexp(acc, prev[s - 2])
            row[s] = em[s] + acc

    beta = [[NEG_INF] * s_len for _ in range(t_len)]
    beta[t_len - 1][s_len - 1] = 0.0
    if s_len > 1:
        beta[t_len - 1][s_len - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        em = lpe[t + 1]
        row = beta[t]
        for s in range(s_len):
            acc = nxt[s] + em[s]
            if s + 1 < s_len:
                acc = _logaddexp(acc, nxt[s + 1] + em[s + 1])
            if s + 2 < s_len and skip[s + 2]:
                acc = _logaddexp(acc, nxt[s + 2] + em[s + 2])
            row[s] = acc
    return alpha, beta


def ctc_loss(logits: np.ndarray, target, blank_id: int) -> CtcResult:
    """Negative log-likelihood of the target plus the exact logit gradient.

    Args:
        logits: [T x V] unnormalized scores (softmax is applied internally).
        target: nonempty symbol-id sequence, blank excluded.
        blank_id: index of the blank symbol.

    Raises:
        AlignmentInfeasibleError: T is too short to realize the target.
        ValidationError: malformed logits or target.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = [int(t) for t in target]
    _validate(logits, target, blank_id)

    ext = _extend_target(target, blank_id)
    skip = _skip_flags(ext, blank_id)
    lp = _log_softmax(logits)
    lpe = lp[:, ext].tolist()
    alpha, beta = _alpha_beta(lpe, skip)

    log_z = _logaddexp(alpha[-1][-1], alpha[-1][-2])
    if log_z == NEG_INF or math.isnan(log_z):
        raise AlignmentInfeasibleError("no feasible alignment for target")

    # Posterior over symbols: fold extended states back onto vocabulary ids.
    grad = np.exp(lp)
    for t in range(len(lpe)):
        at = alpha[t]
        bt = beta[t]
        post: dict[int, float] = {}
        for s, sym in enumerate(ext):
            post[sym] = _logaddexp(post.get(sym, NEG_INF), at[s] + bt[s])
        for sym, lv in post.items():
            if lv != NEG_INF:
                grad[t, sym] -= math.exp(lv - log_z)

    # -log_z can round to a tiny negative when the target is forced with
    # probability ~1; clamp keeps exp(-loss) <= 1.
    return CtcResult(loss=max(0.0, -log_z), grad_logits=grad)


def greedy_decode(logits: np.ndarray, blank_id: int) -> list[int]:
    """Per-frame argmax, collapse consecutive repeats, drop blanks.

    Argmax ties take the smallest symbol id.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValidationError("logits must be a [T x V] matrix")
    ids = logits.argmax(axis=1)
    out: list[int] = []
    prev = -1
    for sym in ids:
        if sym != prev and sym != blank_id:
            out.append(int(sym))
        prev = sym
    return out
