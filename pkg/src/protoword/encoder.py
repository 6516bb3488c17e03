"""Per-frame MLP encoder with a linear logit head and exact analytic gradients.

Each frame passes independently through a stack of affine layers with tanh
between them (identity after the last body layer), then a linear head maps
the embedding to one logit per vocabulary symbol. There is no cross-frame
mixing, so forward is permutation-equivariant over frames and a batch of
utterances can be encoded as one stacked frame matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .datastore import atomic_write_bytes
from .errors import ValidationError

PBM_MAGIC = b"PBM1"

DEFAULT_HIDDEN_DIMS = (32, 32, 16)


def _as_weight(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass
class EncoderParams:
    """Body layers as (weight [out x in], bias [out]) pairs plus the logit head."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    head: tuple[np.ndarray, np.ndarray]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValidationError("encoder needs at least one body layer")
        checked = []
        prev_out = None
        for i, (w, b) in enumerate(self.layers):
            w = _as_weight(w, f"layer {i} weight")
            b = _as_weight(b, f"layer {i} bias")
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ValidationError(f"layer {i}: weight/bias shapes do not agree")
            if prev_out is not None and w.shape[1] != prev_out:
                raise ValidationError(
                    f"layer {i}: input dim {w.shape[1]} does not chain from {prev_out}"
                )
            prev_out = w.shape[0]
            checked.append((w, b))
        self.layers = checked
        hw = _as_weight(self.head[0], "head weight")
        hb = _as_weight(self.head[1], "head bias")
        if hw.ndim != 2 or hb.ndim != 1 or hb.shape[0] != hw.shape[0]:
            raise ValidationError("head: weight/bias shapes do not agree")
        if hw.shape[1] != prev_out:
            raise ValidationError(
                f"head input dim {hw.shape[1]} does not match embedding dim {prev_out}"
            )
        self.head = (hw, hb)

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def embedding_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def vocab_size(self) -> int:
        return self.head[0].shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(w.shape[0] for w, _ in self.layers)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            layers=[(w.copy(), b.copy()) for w, b in self.layers],
            head=(self.head[0].copy(), self.head[1].copy()),
        )


@dataclass
class EmbeddingSequence:
    """Forward output: per-frame embeddings and per-frame symbol logits."""

    embeddings: np.ndarray
    logits: np.ndarray


@dataclass
class EncoderGradients:
    """Parameter gradients mirroring EncoderParams' structure."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    head: tuple[np.ndarray, np.ndarray]


def init_encoder(seed: int, dims, vocab_size: int) -> EncoderParams:
    """Seeded init: uniform weights scaled by 1/sqrt(fan_in), zero biases.

    ``dims`` is the full dimension chain [D_in, h1, ..., D_emb]; the head
    maps D_emb to ``vocab_size`` logits.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValidationError(f"layer dimensions must chain through >= 2 positive sizes, got {dims}")
    if vocab_size < 2:
        raise ValidationError("vocab_size must be at least 2 (one word plus blank)")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.uniform(-1.0, 1.0, size=(fan_out, fan_in)) / np.sqrt(fan_in)
        layers.append((w, np.zeros(fan_out)))
    emb_dim = dims[-1]
    head_w = rng.uniform(-1.0, 1.0, size=(vocab_size, emb_dim)) / np.sqrt(emb_dim)
    return EncoderParams(layers=layers, head=(head_w, np.zeros(vocab_size)))


def _activations(params: EncoderParams, frames: np.ndarray) -> list[np.ndarray]:
    """Layer outputs [a0=frames, a1, ..., a_n=embeddings], tanh between body layers."""
    acts = [frames]
    last = len(params.layers) - 1
    a = frames
    for i, (w, b) in enumerate(params.layers):
        z = a @ w.T + b
        a = z if i == last else np.tanh(z)
        acts.append(a)
    return acts


def forward(params: EncoderParams, frames: np.ndarray) -> EmbeddingSequence:
    """Encode a [T x D_in] frame matrix into embeddings and logits."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValidationError("frames must be a 2-D matrix")
    if frames.shape[1] != params.input_dim:
        raise ValidationError(
            f"frame dim {frames.shape[1]} does not match encoder input dim {params.input_dim}"
        )
    embeddings = _activations(params, frames)[-1]
    head_w, head_b = params.head
    return EmbeddingSequence(embeddings=embeddings, logits=embeddings @ head_w.T + head_b)


def backward(
    params: EncoderParams,
    frames: np.ndarray,
    grad_embeddings: np.ndarray,
    grad_logits: np.ndarray,
) -> EncoderGradients:
    """Exact parameter gradients for a scalar loss with the given partials.

    ``grad_embeddings`` and ``grad_logits`` are dL/d(embeddings) and
    dL/d(logits); both paths are summed where the head branches off.
    """
    frames = np.asarray(frames, dtype=np.float64)
    grad_embeddings = np.asarray(grad_embeddings, dtype=np.float64)
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    acts = _activations(params, frames)
    embeddings = acts[-1]
    if grad_embeddings.shape != embeddings.shape:
        raise ValidationError(
            f"grad_embeddings shape {grad_embeddings.shape} != {embeddings.shape}"
        )
    head_w, _ = params.head
    if grad_logits.shape != (frames.shape[0], head_w.shape[0]):
        raise ValidationError(
            f"grad_logits shape {grad_logits.shape} != {(frames.shape[0], head_w.shape[0])}"
        )

    head_grad = (grad_logits.T @ embeddings, grad_logits.sum(axis=0))
    d = grad_embeddings + grad_logits @ head_w

    last = len(params.layers) - 1
    layer_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    for i in range(last, -1, -1):
        w, _ = params.layers[i]
        dz = d if i == last else d * (1.0 - acts[i + 1] ** 2)
        layer_grads[i] = (dz.T @ acts[i], dz.sum(axis=0))
        d = dz @ w
    return EncoderGradients(layers=layer_grads, head=head_grad)


def param_arrays(params: EncoderParams) -> list[np.ndarray]:
    """Parameter arrays in fixed declaration order (body W,b pairs, then head)."""
    arrays = []
    for w, b in params.layers:
        arrays.extend((w, b))
    arrays.extend(params.head)
    return arrays


def grad_arrays(grads: EncoderGradients) -> list[np.ndarray]:
    arrays = []
    for w, b in grads.layers:
        arrays.extend((w, b))
    arrays.extend(grads.head)
    return arrays


def save_params(params: EncoderParams, path) -> None:
    """Checkpoint: magic PBM1, dims header, float32 little-endian arrays in order."""
    dims = params.dims
    header = PBM_MAGIC + struct.pack("<I", len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    header += struct.pack("<I", params.vocab_size)
    body = b"".join(arr.astype("<f4").tobytes() for arr in param_arrays(params))
    atomic_write_bytes(path, header + body)


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != PBM_MAGIC:
        raise ValidationError(f"{path}: not a PBM1 checkpoint")
    (n_dims,) = struct.unpack_from("<I", data, 4)
    offset = 8
    if n_dims < 2 or len(data) < offset + 4 * (n_dims + 1):
        raise ValidationError(f"{path}: corrupt PBM1 header")
    dims = struct.unpack_from(f"<{n_dims}I", data, offset)
    offset += 4 * n_dims
    (vocab_size,) = struct.unpack_from("<I", data, offset)
    offset += 4

    expected = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    expected += vocab_size * dims[-1] + vocab_size
    if len(data) != offset + expected * 4:
        raise ValidationError(f"{path}: checkpoint size does not match its dims header")

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        return arr.reshape(shape).astype(np.float64)

    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        layers.append((take((fan_out, fan_in)), take((fan_out,))))
    head = (take((vocab_size, dims[-1])), take((vocab_size,)))
    return EncoderParams(layers=layers, head=head)
