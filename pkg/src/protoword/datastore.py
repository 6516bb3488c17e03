"""Feature files, corpus manifests, and leave-one-speaker-out splits.

A corpus on disk is a JSON-lines manifest plus one binary feature file per
utterance. The first manifest line declares the word list and the
per-speaker intelligibility tags; every following line describes one
utterance and points at its feature file. Feature files use the PBF1
format: magic ``PBF1``, little-endian uint32 frame count and feature
dimension, then row-major little-endian float32 frames.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

PBF_MAGIC = b"PBF1"
_PBF_HEADER = struct.Struct("<4sII")

INTELLIGIBILITY_LEVELS = ("high", "mid", "low", "verylow", "control")
SPECIAL_TOKENS = ("<blank>", "<s>", "<pad>", "</s>", "<unk>")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write bytes to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


@dataclass
class Vocabulary:
    """Ordered word list with the special tokens appended after the words.

    Word ids are 0..K-1 in list order; the blank and the other special
    tokens occupy ids K..K+4, so the blank id never collides with a word.
    """

    words: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.words = tuple(self.words)
        if not self.words:
            raise ValidationError("vocabulary needs at least one word")
        self._index = {}
        for i, word in enumerate(self.words):
            if not isinstance(word, str) or not word:
                raise ValidationError(f"invalid vocabulary word at position {i}: {word!r}")
            if word in self._index:
                raise ValidationError(f"duplicate word {word!r} in vocabulary")
            if word in SPECIAL_TOKENS:
                raise ValidationError(f"word {word!r} collides with a special token")
            self._index[word] = i

    @property
    def num_words(self) -> int:
        return len(self.words)

    @property
    def blank_id(self) -> int:
        return len(self.words)

    @property
    def size(self) -> int:
        """Total symbol count: words plus blank, bos, pad, eos, unk."""
        return len(self.words) + len(SPECIAL_TOKENS)

    def id_of(self, word: str) -> int:
        try:
            return self._index[word]
        except KeyError:
            raise ValidationError(f"unknown word {word!r}") from None

    def word_of(self, word_id: int) -> str:
        if 0 <= word_id < self.num_words:
            return self.words[word_id]
        if self.num_words <= word_id < self.size:
            return SPECIAL_TOKENS[word_id - self.num_words]
        raise ValidationError(f"symbol id {word_id} out of range for vocabulary of size {self.size}")

    def __contains__(self, word: str) -> bool:
        return word in self._index


@dataclass
class FeatureSequence:
    """One utterance: a frame matrix plus its identity labels.

    Frames are canonicalized to contiguous float32, matching the on-disk
    representation so write/read round-trips are bit-exact.
    """

    utterance_id: str
    speaker_id: str
    word_id: int
    block: int
    channel: int
    frames: np.ndarray

    def __post_init__(self) -> None:
        if not self.utterance_id:
            raise ValidationError("utterance_id must be nonempty")
        if not self.speaker_id:
            raise ValidationError(f"utterance {self.utterance_id!r}: speaker_id must be nonempty")
        if not isinstance(self.word_id, int) or self.word_id < 0:
            raise ValidationError(f"utterance {self.utterance_id!r}: word_id must be a nonnegative integer")
        if self.block not in (1, 2, 3):
            raise ValidationError(f"utterance {self.utterance_id!r}: block must be 1, 2, or 3")
        if not isinstance(self.channel, int) or self.channel < 1:
            raise ValidationError(f"utterance {self.utterance_id!r}: channel must be a positive integer")
        frames = np.ascontiguousarray(np.asarray(self.frames, dtype=np.float32))
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValidationError(f"utterance {self.utterance_id!r}: frames must be a nonempty 2-D matrix")
        if not np.isfinite(frames).all():
            raise ValidationError(f"utterance {self.utterance_id!r}: frames contain non-finite values")
        self.frames = frames

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class Corpus:
    """A vocabulary, its utterances, and the speaker intelligibility map."""

    vocabulary: Vocabulary
    utterances: list[FeatureSequence]
    speakers: dict[str, str]

    def __post_init__(self) -> None:
        for speaker, level in self.speakers.items():
            if level not in INTELLIGIBILITY_LEVELS:
                raise ValidationError(
                    f"speaker {speaker!r}: unknown intelligibility level {level!r}"
                )
        seen: set[str] = set()
        for seq in self.utterances:
            if seq.utterance_id in seen:
                raise ValidationError(f"duplicate utterance_id {seq.utterance_id!r}")
            seen.add(seq.utterance_id)
            if seq.speaker_id not in self.speakers:
                raise ValidationError(
                    f"utterance {seq.utterance_id!r}: speaker {seq.speaker_id!r} not declared"
                )
            if seq.word_id >= self.vocabulary.num_words:
                raise ValidationError(
                    f"utterance {seq.utterance_id!r}: word_id {seq.word_id} outside vocabulary"
                )

    def dysarthric_speakers(self) -> list[str]:
        return sorted(s for s, level in self.speakers.items() if level != "control")

    def utterances_of(self, speaker_id: str) -> list[FeatureSequence]:
        return [u for u in self.utterances if u.speaker_id == speaker_id]

    def input_dim(self) -> int:
        if not self.utterances:
            raise ValidationError("corpus has no utterances")
        return self.utterances[0].feature_dim


@dataclass
class LosoSplit:
    """Train/support/test partition for one held-out speaker.

    The held-out speaker never appears in train; support holds their
    block-1/3 utterances on a single channel; test holds their block-2
    utterances.
    """

    held_out_speaker: str
    train: list[FeatureSequence]
    support: list[FeatureSequence]
    test: list[FeatureSequence]

    def __post_init__(self) -> None:
        for seq in self.train:
            if seq.speaker_id == self.held_out_speaker:
                raise ValidationError(
                    f"train split leaks held-out speaker utterance {seq.utterance_id!r}"
                )
        channels = set()
        for seq in self.support:
            if seq.speaker_id != self.held_out_speaker:
                raise ValidationError(f"support contains foreign utterance {seq.utterance_id!r}")
            if seq.block not in (1, 3):
                raise ValidationError(f"support utterance {seq.utterance_id!r} is not block 1 or 3")
            channels.add(seq.channel)
        if len(channels) > 1:
            raise ValidationError("support mixes channels")
        for seq in self.test:
            if seq.speaker_id != self.held_out_speaker:
                raise ValidationError(f"test contains foreign utterance {seq.utterance_id!r}")
            if seq.block != 2:
                raise ValidationError(f"test utterance {seq.utterance_id!r} is not block 2")
        overlap = {s.utterance_id for s in self.support} & {s.utterance_id for s in self.test}
        if overlap:
            raise ValidationError(f"support and test overlap: {sorted(overlap)}")


def write_feature_file(seq: FeatureSequence, path: str | Path) -> None:
    """Serialize one utterance's frames to a PBF1 file (metadata stays in the manifest)."""
    frames = np.ascontiguousarray(seq.frames, dtype=np.float32)
    if not np.isfinite(frames).all():
        raise ValidationError(f"utterance {seq.utterance_id!r}: frames contain non-finite values")
    t, d = frames.shape
    payload = _PBF_HEADER.pack(PBF_MAGIC, t, d) + frames.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)


def read_feature_file(path: str | Path) -> np.ndarray:
    """Read a PBF1 file back into a float32 [T x D] matrix."""
    data = Path(path).read_bytes()
    if len(data) < _PBF_HEADER.size:
        raise ValidationError(f"{path}: truncated PBF1 header")
    magic, t, d = _PBF_HEADER.unpack_from(data)
    if magic != PBF_MAGIC:
        raise ValidationError(f"{path}: not a PBF1 file")
    if t < 1 or d < 1:
        raise ValidationError(f"{path}: invalid dimensions {t}x{d}")
    expected = _PBF_HEADER.size + t * d * 4
    if len(data) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes, found {len(data)}")
    frames = np.frombuffer(data, dtype="<f4", offset=_PBF_HEADER.size)
    return frames.reshape(t, d).astype(np.float32)


def _parse_manifest_line(line: str, lineno: int) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest line {lineno}: invalid JSON ({exc})") from None
    if not isinstance(record, dict):
        raise ValidationError(f"manifest line {lineno}: expected an object")
    return record


_UTTERANCE_FIELDS = ("utterance_id", "speaker_id", "word", "block", "channel", "feature_path")


def load_corpus(manifest_path: str | Path) -> Corpus:
    """Load a manifest and every feature file it references.

    The first line must declare ``words`` and ``speakers``; utterance lines
    resolve their word strings against that list. Ordering follows the
    manifest, so two loads of the same manifest produce identical corpora.
    """
    manifest_path = Path(manifest_path)
    text = manifest_path.read_text(encoding="utf-8")
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if not lines:
        raise ValidationError(f"{manifest_path}: empty manifest")

    lineno, header_line = lines[0]
    header = _parse_manifest_line(header_line, lineno)
    if "words" not in header or "speakers" not in header:
        raise ValidationError(f"{manifest_path}: first line must declare 'words' and 'speakers'")
    vocabulary = Vocabulary(tuple(header["words"]))
    speakers = dict(header["speakers"])

    utterances = []
    for lineno, line in lines[1:]:
        record = _parse_manifest_line(line, lineno)
        missing = [k for k in _UTTERANCE_FIELDS if k not in record]
        if missing:
            raise ValidationError(f"manifest line {lineno}: missing fields {missing}")
        word_id = vocabulary.id_of(record["word"])
        frames = read_feature_file(manifest_path.parent / record["feature_path"])
        utterances.append(
            FeatureSequence(
                utterance_id=record["utterance_id"],
                speaker_id=record["speaker_id"],
                word_id=word_id,
                block=int(record["block"]),
                channel=int(record["channel"]),
                frames=frames,
            )
        )
    return Corpus(vocabulary=vocabulary, utterances=utterances, speakers=speakers)


def write_corpus(corpus: Corpus, out_dir: str | Path, features_dirname: str = "features") -> Path:
    """Write manifest plus feature files under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    lines = [
        json.dumps(
            {
                "words": list(corpus.vocabulary.words),
                "speakers": {k: corpus.speakers[k] for k in sorted(corpus.speakers)},
            },
            sort_keys=True,
        )
    ]
    for seq in corpus.utterances:
        if "/" in seq.utterance_id or seq.utterance_id in (".", ".."):
            raise ValidationError(f"utterance_id {seq.utterance_id!r} is not filesystem-safe")
        rel = f"{features_dirname}/{seq.utterance_id}.pbf"
        write_feature_file(seq, out_dir / rel)
        lines.append(
            json.dumps(
                {
                    "utterance_id": seq.utterance_id,
                    "speaker_id": seq.speaker_id,
                    "word": corpus.vocabulary.word_of(seq.word_id),
                    "block": seq.block,
                    "channel": seq.channel,
                    "feature_path": rel,
                },
                sort_keys=True,
            )
        )
    manifest = out_dir / "manifest.jsonl"
    atomic_write_text(manifest, "\n".join(lines) + "\n")
    return manifest


def make_loso_split(corpus: Corpus, held_out: str, support_channel: int = 1) -> LosoSplit:
    """Partition the corpus around one held-out dysarthric speaker.

    Train keeps the other speakers' block-1/3 utterances plus everything
    from control-tagged speakers; support keeps the held-out speaker's
    block-1/3 utterances on ``support_channel``; test keeps their block-2
    utterances on every channel.
    """
    level = corpus.speakers.get(held_out)
    if level is None:
        raise ValidationError(f"unknown speaker {held_out!r}")
    if level == "control":
        raise ValidationError(f"speaker {held_out!r} is control-tagged and cannot be held out")

    train = [
        u
        for u in corpus.utterances
        if u.speaker_id != held_out
        and (corpus.speakers[u.speaker_id] == "control" or u.block in (1, 3))
    ]
    support = [
        u
        for u in corpus.utterances
        if u.speaker_id == held_out and u.block in (1, 3) and u.channel == support_channel
    ]
    test = [u for u in corpus.utterances if u.speaker_id == held_out and u.block == 2]
    if not support:
        raise ValidationError(
            f"empty support set for speaker {held_out!r} on channel {support_channel}"
        )
    return LosoSplit(held_out_speaker=held_out, train=train, support=support, test=test)
