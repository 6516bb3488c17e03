"""Word error rate, clustering diagnostics, and the held-out-speaker harness.

The harness holds out each dysarthric speaker in turn and fills one row of
a result matrix: greedy decoding with a speaker-independent model (with and
without the contrastive term), nearest-prototype classification under both
models, a fine-tuned decoder, and prototypes under the fine-tuned model.
Two extra columns evaluate models trained with every speaker's training
blocks ("seen" condition) on the same test sets.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import ctc, encoder, prototype, trainer
from .datastore import Corpus, FeatureSequence, LosoSplit, Vocabulary, make_loso_split
from .errors import ValidationError

MATRIX_COLUMNS = (
    "si_greedy",
    "si_greedy_scl",
    "proto",
    "proto_scl",
    "ft_greedy",
    "ft_proto",
    "seen_greedy",
    "seen_greedy_scl",
)

CLUSTER_COLUMNS = ("cluster_plain", "cluster_scl", "cluster_ft")


def _fmt_float(x) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_words: int = 0

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_words + other.ref_words,
        )

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        if self.ref_words == 0:
            raise ValidationError("WER undefined without reference words")
        return 100.0 * self.errors / self.ref_words


def _align_counts(ref: list[str], hyp: list[str]) -> EditCounts:
    # Levenshtein DP with a backtrace; ties prefer match/substitution, then
    # deletion, then insertion, so the S/D/I split is deterministic.
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            cost[i, j] = min(sub, cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    s = d = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(int(s), int(d), int(ins), n)


def word_error_rate(refs: list[list[str]], hyps: list[list[str]]) -> EditCounts:
    """Summed edit counts over aligned (reference, hypothesis) pairs."""
    if len(refs) != len(hyps):
        raise ValidationError(f"{len(refs)} references but {len(hyps)} hypotheses")
    total = EditCounts()
    for k, (ref, hyp) in enumerate(zip(refs, hyps)):
        if not ref:
            raise ValidationError(f"reference {k} is empty")
        total = total + _align_counts(list(ref), list(hyp))
    return total


@dataclass(frozen=True)
class ClusterMetrics:
    intra: float
    inter: float

    @property
    def ratio(self) -> float:
        if self.inter == 0.0:
            return 0.0 if self.intra == 0.0 else float("inf")
        return self.intra / self.inter


def cluster_metrics(embeddings: np.ndarray, labels) -> ClusterMetrics:
    """Mean within-class spread vs mean centroid separation, squared L2."""
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValidationError("need a 2-D embedding matrix with at least 2 rows")
    if lab.shape != (emb.shape[0],):
        raise ValidationError("labels must be a vector matching the embedding rows")
    classes = np.unique(lab)
    if classes.size < 2:
        raise ValidationError("cluster metrics need at least 2 distinct labels")
    centroids = []
    spreads = []
    for c in classes:
        members = emb[lab == c]
        mu = members.mean(axis=0)
        centroids.append(mu)
        spreads.append(float(((members - mu) ** 2).sum(axis=1).mean()))
    cent = np.stack(centroids)
    pair = ((cent[:, None, :] - cent[None, :, :]) ** 2).sum(axis=2)
    iu = np.triu_indices(classes.size, k=1)
    return ClusterMetrics(intra=float(np.mean(spreads)), inter=float(pair[iu].mean()))


@dataclass
class WERReport:
    per_speaker: dict[str, float]
    per_level: dict[str, float]
    speaker_mean: float
    weighted: float
    counts: EditCounts
    num_utterances: int

    def to_json_dict(self) -> dict:
        return {
            "per_speaker": dict(sorted(self.per_speaker.items())),
            "per_level": dict(sorted(self.per_level.items())),
            "speaker_mean": self.speaker_mean,
            "weighted": self.weighted,
            "substitutions": self.counts.substitutions,
            "deletions": self.counts.deletions,
            "insertions": self.counts.insertions,
            "ref_words": self.counts.ref_words,
            "num_utterances": self.num_utterances,
        }


def aggregate_report(
    per_speaker_counts: dict[str, EditCounts],
    speaker_levels: dict[str, str],
    num_utterances: int,
) -> WERReport:
    """Speaker-mean and utterance-weighted WER from per-speaker edit counts.

    Level means average the member speakers' WERs; the weighted figure is
    recomputed from the raw summed counts, so mean-of-means drift stays
    visible in the report rather than hidden.
    """
    if not per_speaker_counts:
        raise ValidationError("no speakers to aggregate")
    per_speaker = {s: c.wer for s, c in per_speaker_counts.items()}
    by_level: dict[str, list[float]] = {}
    for s, w in per_speaker.items():
        by_level.setdefault(speaker_levels[s], []).append(w)
    per_level = {lvl: float(np.mean(ws)) for lvl, ws in by_level.items()}
    total = EditCounts()
    for c in per_speaker_counts.values():
        total = total + c
    return WERReport(
        per_speaker=per_speaker,
        per_level=per_level,
        speaker_mean=float(np.mean(list(per_speaker.values()))),
        weighted=total.wer,
        counts=total,
        num_utterances=num_utterances,
    )


@dataclass
class HarnessConfig:
    """Settings for one full held-out-speaker matrix run.

    The defaults are tuned for the synthetic corpus at its default size:
    small batches and a fixed 150-epoch horizon (patience equal to
    max_epochs disables early stopping, since the loss on this data keeps
    creeping down and a variable horizon would make runs incomparable).
    """

    seed: int = 0
    dims: tuple[int, ...] | None = None
    learning_rate: float = 2e-3
    batch_size: int = 6
    max_epochs: int = 150
    patience: int = 150
    tau: float = 0.07
    ft_learning_rate: float = 3e-3
    ft_max_epochs: int = 30
    support_channel: int = 1
    jobs: int = 1

    def validate(self) -> None:
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if self.ft_max_epochs < 1:
            raise ValidationError("ft_max_epochs must be positive")
        if self.ft_learning_rate < 0:
            raise ValidationError("ft_learning_rate must be nonnegative")

    def train_config(self, use_scl: bool, seed: int) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            use_scl=use_scl,
            tau=self.tau,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=seed,
            dims=self.dims,
        )


@dataclass
class SpeakerCell:
    speaker_id: str
    level: str
    num_test_utterances: int
    counts: dict[str, EditCounts]
    cluster: dict[str, ClusterMetrics]

    def wer(self, column: str) -> float:
        return self.counts[column].wer


@dataclass
class LosoResult:
    cells: list[SpeakerCell]
    speaker_levels: dict[str, str]

    def reports(self) -> dict[str, WERReport]:
        out = {}
        for col in MATRIX_COLUMNS:
            counts = {c.speaker_id: c.counts[col] for c in self.cells}
            n = sum(c.num_test_utterances for c in self.cells)
            out[col] = aggregate_report(counts, self.speaker_levels, n)
        return out

    def column_means(self) -> dict[str, float]:
        out = {col: r.speaker_mean for col, r in self.reports().items()}
        for col in CLUSTER_COLUMNS:
            out[col] = float(np.mean([c.cluster[col].ratio for c in self.cells]))
        return out

    def to_csv_text(self) -> str:
        cols = list(MATRIX_COLUMNS)
        lines = ["row,level,n_test," + ",".join(cols + list(CLUSTER_COLUMNS))]
        fmt = _fmt_float
        for c in self.cells:
            wers = [fmt(c.wer(col)) for col in cols]
            ratios = [fmt(c.cluster[k].ratio) for k in CLUSTER_COLUMNS]
            lines.append(
                f"{c.speaker_id},{c.level},{c.num_test_utterances}," + ",".join(wers + ratios)
            )
        reports = self.reports()
        levels = sorted({c.level for c in self.cells})
        for lvl in levels:
            vals = [fmt(reports[col].per_level[lvl]) for col in cols]
            members = [c for c in self.cells if c.level == lvl]
            n = sum(c.num_test_utterances for c in members)
            ratio_means = [
                fmt(np.mean([c.cluster[k].ratio for c in members])) for k in CLUSTER_COLUMNS
            ]
            lines.append(f"level:{lvl},{lvl},{n}," + ",".join(vals + ratio_means))
        n_all = sum(c.num_test_utterances for c in self.cells)
        mean_vals = [fmt(reports[col].speaker_mean) for col in cols]
        mean_ratios = [
            fmt(np.mean([c.cluster[k].ratio for c in self.cells])) for k in CLUSTER_COLUMNS
        ]
        lines.append(f"mean,all,{n_all}," + ",".join(mean_vals + mean_ratios))
        weighted_vals = [fmt(reports[col].weighted) for col in cols]
        lines.append(f"weighted,all,{n_all}," + ",".join(weighted_vals + [""] * 3))
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "columns": list(MATRIX_COLUMNS),
            "speakers": [
                {
                    "speaker_id": c.speaker_id,
                    "level": c.level,
                    "num_test_utterances": c.num_test_utterances,
                    "wer": {col: c.wer(col) for col in MATRIX_COLUMNS},
                    "counts": {
                        col: {
                            "substitutions": cnt.substitutions,
                            "deletions": cnt.deletions,
                            "insertions": cnt.insertions,
                            "ref_words": cnt.ref_words,
                        }
                        for col, cnt in sorted(c.counts.items())
                    },
                    "cluster": {
                        k: {"intra": m.intra, "inter": m.inter, "ratio": m.ratio}
                        for k, m in sorted(c.cluster.items())
                    },
                }
                for c in self.cells
            ],
            "reports": {col: r.to_json_dict() for col, r in self.reports().items()},
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"


def first_frame_embeddings(
    params: encoder.EncoderParams, utterances: list[FeatureSequence]
) -> np.ndarray:
    """One embedding per utterance: the encoder output for frame 0."""
    if not utterances:
        raise ValidationError("no utterances to embed")
    firsts = np.stack([u.frames[0] for u in utterances]).astype(np.float64)
    return encoder.forward(params, firsts).embeddings


def greedy_counts(
    params: encoder.EncoderParams,
    utterances: list[FeatureSequence],
    vocab: Vocabulary,
) -> EditCounts:
    refs = []
    hyps = []
    for u in utterances:
        out = encoder.forward(params, u.frames.astype(np.float64))
        ids = ctc.greedy_decode(out.logits, vocab.blank_id)
        refs.append([vocab.word_of(u.word_id)])
        hyps.append([vocab.word_of(i) for i in ids])
    return word_error_rate(refs, hyps)


def prototype_counts(
    params: encoder.EncoderParams,
    protos: prototype.PrototypeSet,
    utterances: list[FeatureSequence],
    vocab: Vocabulary,
) -> EditCounts:
    emb = first_frame_embeddings(params, utterances)
    preds = prototype.batch_classify(emb, protos)
    refs = [[vocab.word_of(u.word_id)] for u in utterances]
    hyps = [[vocab.word_of(p.word_id)] for p in preds]
    return word_error_rate(refs, hyps)


def support_prototypes(
    params: encoder.EncoderParams, support: list[FeatureSequence]
) -> prototype.PrototypeSet:
    emb = first_frame_embeddings(params, support)
    return prototype.build_prototypes(
        [(u.word_id, emb[i]) for i, u in enumerate(support)]
    )


def _speaker_cell(corpus: Corpus, speaker: str, config: HarnessConfig, index: int) -> SpeakerCell:
    try:
        split = make_loso_split(corpus, speaker, config.support_channel)
        vocab = corpus.vocabulary
        base = config.seed

        plain, _ = trainer.train(split.train, vocab, config.train_config(False, base + 1000 + index))
        scl_model, _ = trainer.train(split.train, vocab, config.train_config(True, base + 2000 + index))
        ft_cfg = replace(
            config.train_config(False, base + 3000 + index),
            learning_rate=config.ft_learning_rate,
            max_epochs=config.ft_max_epochs,
        )
        ft_model, _ = trainer.fine_tune(plain, split.support, vocab, ft_cfg)

        counts = {
            "si_greedy": greedy_counts(plain, split.test, vocab),
            "si_greedy_scl": greedy_counts(scl_model, split.test, vocab),
            "proto": prototype_counts(plain, support_prototypes(plain, split.support), split.test, vocab),
            "proto_scl": prototype_counts(
                scl_model, support_prototypes(scl_model, split.support), split.test, vocab
            ),
            "ft_greedy": greedy_counts(ft_model, split.test, vocab),
            "ft_proto": prototype_counts(
                ft_model, support_prototypes(ft_model, split.support), split.test, vocab
            ),
        }
        labels = np.array([u.word_id for u in split.test])
        cluster = {
            "cluster_plain": cluster_metrics(first_frame_embeddings(plain, split.test), labels),
            "cluster_scl": cluster_metrics(first_frame_embeddings(scl_model, split.test), labels),
            "cluster_ft": cluster_metrics(first_frame_embeddings(ft_model, split.test), labels),
        }
        return SpeakerCell(
            speaker_id=speaker,
            level=corpus.speakers[speaker],
            num_test_utterances=len(split.test),
            counts=counts,
            cluster=cluster,
        )
    except ValidationError as exc:
        raise ValidationError(f"held-out speaker {speaker!r}: {exc}") from exc


def _seen_split(corpus: Corpus) -> tuple[list[FeatureSequence], dict[str, list[FeatureSequence]]]:
    """Training blocks of every speaker; block-2 test sets per dysarthric speaker."""
    train = []
    test: dict[str, list[FeatureSequence]] = {s: [] for s in corpus.dysarthric_speakers()}
    for u in corpus.utterances:
        control = corpus.speakers[u.speaker_id] == "control"
        if u.block in (1, 3) or control:
            train.append(u)
        elif u.block == 2 and not control:
            test[u.speaker_id].append(u)
    return train, test


def _seen_counts(corpus: Corpus, config: HarnessConfig) -> dict[str, dict[str, EditCounts]]:
    train, test = _seen_split(corpus)
    vocab = corpus.vocabulary
    plain, _ = trainer.train(train, vocab, config.train_config(False, config.seed + 11))
    scl_model, _ = trainer.train(train, vocab, config.train_config(True, config.seed + 12))
    out: dict[str, dict[str, EditCounts]] = {}
    for s in sorted(test):
        out[s] = {
            "seen_greedy": greedy_counts(plain, test[s], vocab),
            "seen_greedy_scl": greedy_counts(scl_model, test[s], vocab),
        }
    return out


def run_loso(corpus: Corpus, config: HarnessConfig) -> LosoResult:
    """Full held-out-speaker matrix; deterministic for a fixed corpus and seed."""
    config.validate()
    speakers = corpus.dysarthric_speakers()
    if len(speakers) < 2:
        raise ValidationError("harness needs at least 2 dysarthric speakers")

    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            cells = list(
                pool.map(
                    _speaker_cell,
                    [corpus] * len(speakers),
                    speakers,
                    [config] * len(speakers),
                    range(len(speakers)),
                )
            )
    else:
        cells = [_speaker_cell(corpus, s, config, i) for i, s in enumerate(speakers)]

    seen = _seen_counts(corpus, config)
    for cell in cells:
        cell.counts.update(seen[cell.speaker_id])

    levels = {s: corpus.speakers[s] for s in speakers}
    return LosoResult(cells=cells, speaker_levels=levels)


def embeddings_csv_text(
    params: encoder.EncoderParams,
    utterances: list[FeatureSequence],
    vocab: Vocabulary,
) -> str:
    """First-frame embeddings as CSV for external plotting tools."""
    emb = first_frame_embeddings(params, utterances)
    dim = emb.shape[1]
    lines = ["utterance_id,word," + ",".join(f"e{i}" for i in range(dim))]
    for u, row in zip(utterances, emb):
        values = ",".join(repr(float(x)) for x in row)
        lines.append(f"{u.utterance_id},{vocab.word_of(u.word_id)},{values}")
    return "\n".join(lines) + "\n"
