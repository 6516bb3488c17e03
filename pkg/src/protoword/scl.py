"""Temperature-scaled contrastive loss over a labeled batch of embeddings.

Anchors are L2-normalized onto the unit sphere before any dot product.
For each anchor with at least one same-label partner, the loss averages
log-softmax similarity scores over those positives, where the softmax runs
over every other anchor in the batch. Anchors without positives contribute
nothing and are counted as skipped; they still appear as negatives for the
rest of the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class SclResult:
    loss: float
    grad_anchors: np.ndarray
    skipped: int


def scl_loss(anchors: np.ndarray, labels, tau: float = 0.07) -> SclResult:
    """Contrastive loss and its exact gradient w.r.t. the unnormalized anchors.

    Args:
        anchors: [N x D] embeddings, N >= 2, no zero rows.
        labels: N integer class labels; equal labels mark positives.
        tau: temperature dividing each dot product inside the exponent.
    """
    x = np.asarray(anchors, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2:
        raise ValidationError("anchors must be a 2-D matrix")
    n = x.shape[0]
    if n < 2:
        raise ValidationError("need at least 2 anchors")
    if labels.shape != (n,):
        raise ValidationError(f"expected {n} labels, got shape {labels.shape}")
    if not np.isfinite(x).all():
        raise ValidationError("anchors contain non-finite values")
    if tau <= 0:
        raise ValidationError("tau must be positive")

    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"zero-norm anchor at index {int(zero[0])}")
    z = x / norms[:, None]

    sim = (z @ z.T) / tau
    off_diag = ~np.eye(n, dtype=bool)
    positives = (labels[:, None] == labels[None, :]) & off_diag

    # Stable log-denominator and softmax over a != i.
    sim_off = np.where(off_diag, sim, -np.inf)
    row_max = sim_off.max(axis=1)
    exp_off = np.exp(sim_off - row_max[:, None])
    denom = exp_off.sum(axis=1)
    log_denom = row_max + np.log(denom)
    softmax = exp_off / denom[:, None]

    pos_counts = positives.sum(axis=1)
    active = pos_counts > 0
    safe_counts = np.maximum(pos_counts, 1)
    per_anchor = -(sim * positives).sum(axis=1) / safe_counts + log_denom
    loss = float(per_anchor[active].sum())

    # d(loss)/d(sim[i, a]) for ordered pairs; zero rows for skipped anchors.
    coeff = np.where(active, 1.0 / safe_counts, 0.0)
    g = softmax * active[:, None] - positives * coeff[:, None]

    # sim is symmetric in (i, a), so both orderings feed each z_i.
    grad_z = ((g + g.T) @ z) / tau
    # Through the normalization: project out the radial component.
    radial = (grad_z * z).sum(axis=1, keepdims=True)
    grad_x = (grad_z - radial * z) / norms[:, None]

    return SclResult(loss=loss, grad_anchors=grad_x, skipped=int(n - active.sum()))
