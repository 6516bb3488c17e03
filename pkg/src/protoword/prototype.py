"""Per-word mean prototypes and exhaustive nearest-prototype classification.

Prototypes are arithmetic means of support embeddings, one row per word
present in the support set. Queries are scored by squared Euclidean
distance against every prototype (the argmin is identical to true L2);
ties go to the smallest word id.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datastore import atomic_write_text
from .errors import ValidationError

_CHUNK = 256


@dataclass
class PrototypeSet:
    """Prototype matrix with rows sorted by ascending word id."""

    prototypes: np.ndarray
    word_ids: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        self.word_ids = np.asarray(self.word_ids, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = self.prototypes.shape[0] if self.prototypes.ndim == 2 else -1
        if k < 1 or self.word_ids.shape != (k,) or self.counts.shape != (k,):
            raise ValidationError("prototypes, word_ids, and counts must agree on one row per word")
        if not np.isfinite(self.prototypes).all():
            raise ValidationError("prototypes contain non-finite values")
        if (self.counts < 1).any():
            raise ValidationError("every prototype needs at least one support sample")
        if (np.diff(self.word_ids) <= 0).any():
            raise ValidationError("word_ids must be strictly increasing")

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


@dataclass
class Classification:
    word_id: int
    distance: float
    runner_up_margin: float


def build_prototypes(support) -> PrototypeSet:
    """Average same-word embeddings from (word_id, embedding) pairs.

    Pooling to a single vector per utterance (e.g. taking frame 0) is the
    caller's responsibility.
    """
    groups: dict[int, list[np.ndarray]] = {}
    dim = None
    for word_id, emb in support:
        emb = np.asarray(emb, dtype=np.float64)
        if emb.ndim != 1:
            raise ValidationError("support embeddings must be 1-D vectors")
        if dim is None:
            dim = emb.shape[0]
        elif emb.shape[0] != dim:
            raise ValidationError(
                f"support embedding dim {emb.shape[0]} does not match {dim}"
            )
        groups.setdefault(int(word_id), []).append(emb)
    if not groups:
        raise ValidationError("support set is empty")

    word_ids = sorted(groups)
    prototypes = np.stack([np.stack(groups[w]).mean(axis=0) for w in word_ids])
    counts = np.array([len(groups[w]) for w in word_ids], dtype=np.int64)
    return PrototypeSet(prototypes=prototypes, word_ids=np.array(word_ids), counts=counts)


def batch_classify(embeddings: np.ndarray, protos: PrototypeSet) -> list[Classification]:
    """Nearest prototype for each query row, in row order."""
    queries = np.asarray(embeddings, dtype=np.float64)
    if queries.ndim != 2:
        raise ValidationError("embeddings must be a 2-D matrix")
    if queries.shape[0] and queries.shape[1] != protos.dim:
        raise ValidationError(
            f"query dim {queries.shape[1]} does not match prototype dim {protos.dim}"
        )

    results: list[Classification] = []
    for start in range(0, queries.shape[0], _CHUNK):
        chunk = queries[start : start + _CHUNK]
        dists = ((chunk[:, None, :] - protos.prototypes[None, :, :]) ** 2).sum(axis=2)
        best = dists.argmin(axis=1)  # first minimum = smallest word id
        best_d = dists[np.arange(len(chunk)), best]
        if protos.size == 1:
            margins = np.full(len(chunk), math.inf)
        else:
            second = np.partition(dists, 1, axis=1)[:, 1]
            margins = second - best_d
        for row in range(len(chunk)):
            results.append(
                Classification(
                    word_id=int(protos.word_ids[best[row]]),
                    distance=float(best_d[row]),
                    runner_up_margin=float(margins[row]),
                )
            )
    return results


def classify(embedding: np.ndarray, protos: PrototypeSet) -> Classification:
    """Nearest prototype for a single query vector."""
    emb = np.asarray(embedding, dtype=np.float64)
    if emb.ndim != 1:
        raise ValidationError("embedding must be a 1-D vector")
    return batch_classify(emb[None, :], protos)[0]


def save_prototypes_csv(protos: PrototypeSet, path) -> None:
    """CSV rows: word_id, count, then the embedding values."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["word_id", "count"] + [f"e{i}" for i in range(protos.dim)])
    for row in range(protos.size):
        writer.writerow(
            [int(protos.word_ids[row]), int(protos.counts[row])]
            + [repr(float(v)) for v in protos.prototypes[row]]
        )
    atomic_write_text(path, buf.getvalue())


def load_prototypes_csv(path) -> PrototypeSet:
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r]
    if len(rows) < 2 or rows[0][:2] != ["word_id", "count"]:
        raise ValidationError(f"{path}: not a prototype CSV")
    word_ids, counts, vectors = [], [], []
    for r in rows[1:]:
        word_ids.append(int(r[0]))
        counts.append(int(r[1]))
        vectors.append([float(v) for v in r[2:]])
    return PrototypeSet(
        prototypes=np.array(vectors, dtype=np.float64),
        word_ids=np.array(word_ids),
        counts=np.array(counts),
    )
