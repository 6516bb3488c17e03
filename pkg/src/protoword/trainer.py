"""Training loop: alignment loss plus optional contrastive term, Adam updates.

Each batch stacks its utterances' frames into one matrix so the encoder
runs once per batch. The batch objective is the mean alignment loss over
utterances plus, when enabled, the contrastive loss over the batch's
first-frame embeddings (an unweighted sum of the two terms). Training is
bit-deterministic for a fixed seed and config.

The monitored epoch loss weights utterances equally and uses exact
summation, so its alignment term does not depend on how the shuffle
partitioned the epoch into batches; with a zero learning rate (and no
contrastive term, which is inherently batch-level) every epoch reports
the same float and patience-based stopping is exact, not ulp luck.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ctc, encoder, scl
from .datastore import FeatureSequence, Vocabulary
from .errors import AlignmentInfeasibleError, ValidationError


@dataclass
class TrainConfig:
    use_scl: bool = False
    tau: float = 0.07
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dims: tuple[int, ...] | None = None  # full chain [D_in, ..., D_emb]; None = default hiddens

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if self.use_scl and self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 when the contrastive term is enabled")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be positive")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    ctc_losses: list[float] = field(default_factory=list)
    scl_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    skipped_alignments: int = 0

    @property
    def epochs(self) -> int:
        return len(self.losses)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,loss,ctc,scl\n")
        for i, (total, c, s) in enumerate(zip(self.losses, self.ctc_losses, self.scl_losses), 1):
            buf.write(f"{i},{total!r},{c!r},{s!r}\n")
        return buf.getvalue()


class _Adam:
    """Adaptive-moment updates over a fixed-order list of parameter arrays."""

    def __init__(self, arrays: list[np.ndarray], config: TrainConfig):
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.epsilon
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


def _utterance_targets(utterances: list[FeatureSequence]) -> list[list[int]]:
    return [[u.word_id] for u in utterances]


@dataclass
class BatchResult:
    """One batch's objective value and gradients.

    ``loss`` is None when no utterance in the batch admits a feasible
    alignment; ``utterance_losses`` holds the raw per-utterance alignment
    losses of the feasible utterances, in batch order.
    """

    loss: float | None
    ctc_part: float
    scl_part: float
    grads: encoder.EncoderGradients | None
    skipped: int
    utterance_losses: list[float]


def batch_objective(
    params: encoder.EncoderParams,
    utterances: list[FeatureSequence],
    vocab: Vocabulary,
    config: TrainConfig,
    targets: list[list[int]] | None = None,
    want_grads: bool = True,
) -> BatchResult:
    """Loss and gradients for one batch; grads is None when ``want_grads``
    is false."""
    if targets is None:
        targets = _utterance_targets(utterances)
    stacked = np.concatenate([u.frames for u in utterances], axis=0).astype(np.float64)
    offsets = np.zeros(len(utterances) + 1, dtype=np.int64)
    np.cumsum([u.num_frames for u in utterances], out=offsets[1:])

    out = encoder.forward(params, stacked)
    blank = vocab.blank_id

    grad_logits = np.zeros_like(out.logits)
    grad_emb = np.zeros_like(out.embeddings)
    ctc_losses = []
    feasible: list[int] = []
    skipped = 0
    per_utt_grads = []
    for i, target in enumerate(targets):
        rows = slice(offsets[i], offsets[i + 1])
        try:
            result = ctc.ctc_loss(out.logits[rows], target, blank)
        except AlignmentInfeasibleError:
            skipped += 1
            continue
        feasible.append(i)
        ctc_losses.append(result.loss)
        per_utt_grads.append((rows, result.grad_logits))
    if not feasible:
        return BatchResult(None, 0.0, 0.0, None, skipped, [])

    n_eff = len(feasible)
    ctc_part = math.fsum(ctc_losses) / n_eff
    for rows, g in per_utt_grads:
        grad_logits[rows] = g / n_eff

    scl_part = 0.0
    if config.use_scl and n_eff >= 2:
        first_rows = offsets[:-1][feasible]
        anchors = out.embeddings[first_rows]
        labels = np.array([targets[i][0] for i in feasible])
        res = scl.scl_loss(anchors, labels, config.tau)
        scl_part = res.loss
        grad_emb[first_rows] += res.grad_anchors

    loss = ctc_part + scl_part
    grads = None
    if want_grads:
        grads = encoder.backward(params, stacked, grad_emb, grad_logits)
    return BatchResult(loss, ctc_part, scl_part, grads, skipped, ctc_losses)


def _optimize(
    params: encoder.EncoderParams,
    utterances: list[FeatureSequence],
    vocab: Vocabulary,
    config: TrainConfig,
    on_batch=None,
) -> tuple[encoder.EncoderParams, TrainHistory]:
    if not utterances:
        raise ValidationError("training split is empty")
    for u in utterances:
        if u.word_id >= vocab.num_words:
            raise ValidationError(f"utterance {u.utterance_id!r}: word_id outside vocabulary")

    rng = np.random.default_rng(config.seed)
    arrays = encoder.param_arrays(params)
    adam = _Adam(arrays, config)
    history = TrainHistory()

    best_loss = np.inf
    best_params = params.copy()
    no_improve = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(utterances))
        utt_losses: list[float] = []
        batch_scl: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch_ids = order[start : start + config.batch_size]
            batch = [utterances[i] for i in batch_ids]
            snapshot = params.copy() if on_batch is not None else None
            result = batch_objective(params, batch, vocab, config)
            history.skipped_alignments += result.skipped
            if result.loss is None:
                continue
            adam.step(arrays, encoder.grad_arrays(result.grads))
            utt_losses.extend(result.utterance_losses)
            if config.use_scl:
                batch_scl.append(result.scl_part)
            if on_batch is not None:
                on_batch(epoch, [u.utterance_id for u in batch], snapshot, result.loss)
        if not utt_losses:
            raise ValidationError("no utterance admits a feasible alignment")

        # fsum makes both epoch means independent of batch partitioning
        ctc_mean = math.fsum(utt_losses) / len(utt_losses)
        scl_mean = math.fsum(batch_scl) / len(batch_scl) if batch_scl else 0.0
        epoch_loss = ctc_mean + scl_mean
        history.losses.append(epoch_loss)
        history.ctc_losses.append(ctc_mean)
        history.scl_losses.append(scl_mean)

        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = params.copy()
            history.best_epoch = epoch
            no_improve = 0
        else:
            no_improve += 1
            if no_improve >= config.patience:
                history.stop_reason = "early_stop"
                break
    if not history.stop_reason:
        history.stop_reason = "max_epochs"
    return best_params, history


def train(
    utterances: list[FeatureSequence],
    vocab: Vocabulary,
    config: TrainConfig,
    on_batch=None,
) -> tuple[encoder.EncoderParams, TrainHistory]:
    """Train a fresh encoder on the given split; returns best-epoch parameters."""
    config.validate()
    if not utterances:
        raise ValidationError("training split is empty")
    input_dim = utterances[0].feature_dim
    dims = config.dims if config.dims is not None else (input_dim,) + encoder.DEFAULT_HIDDEN_DIMS
    if dims[0] != input_dim:
        raise ValidationError(
            f"dims chain starts at {dims[0]} but the data has {input_dim} features"
        )
    params = encoder.init_encoder(config.seed, dims, vocab.size)
    return _optimize(params, utterances, vocab, config, on_batch)


def fine_tune(
    params: encoder.EncoderParams,
    support: list[FeatureSequence],
    vocab: Vocabulary,
    config: TrainConfig,
    on_batch=None,
) -> tuple[encoder.EncoderParams, TrainHistory]:
    """Continue training from existing parameters on a (small) support split."""
    config.validate()
    return _optimize(params.copy(), support, vocab, config, on_batch)
