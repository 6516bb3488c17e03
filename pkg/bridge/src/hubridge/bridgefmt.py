"""Bridge manifest parsing and core-format output writing.

The bridge reads a JSON job description (which audio maps to which word,
speaker, block, and channel) and writes the corpus layout the core
pipeline consumes: a ``manifest.jsonl`` whose first line declares the
word list and speaker tags, followed by one utterance line per row, plus
one PBF1 feature file per utterance. The byte layout here must stay
bit-compatible with the core's reader: magic ``PBF1``, little-endian
uint32 frame count and feature dimension, then row-major little-endian
float32 frames.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

PBF_MAGIC = b"PBF1"
_PBF_HEADER = struct.Struct("<4sII")

# mirrors the core's speaker tags and reserved vocabulary entries
INTELLIGIBILITY_LEVELS = ("high", "mid", "low", "verylow", "control")
SPECIAL_TOKENS = ("<blank>", "<s>", "<pad>", "</s>", "<unk>")

_ROW_FIELDS = ("audio", "utterance_id", "speaker_id", "word", "block", "channel")


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


def write_feature_file(frames: np.ndarray, path: str | Path) -> None:
    """Serialize one [T x D] float32 frame matrix as a PBF1 file."""
    frames = np.ascontiguousarray(np.asarray(frames, dtype=np.float32))
    if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
        raise ValidationError("frames must be a nonempty 2-D matrix")
    if not np.isfinite(frames).all():
        raise ValidationError("frames contain non-finite values")
    t, d = frames.shape
    payload = _PBF_HEADER.pack(PBF_MAGIC, t, d) + frames.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)


@dataclass(frozen=True)
class BridgeRow:
    """One audio file and the corpus identity its features will carry."""

    audio: Path
    utterance_id: str
    speaker_id: str
    word: str
    block: int
    channel: int


@dataclass
class BridgeManifest:
    """A feature-extraction job: model, layer, vocabulary, speakers, rows."""

    checkpoint: str
    layer: int | None
    words: tuple[str, ...]
    speakers: dict[str, str]
    rows: list[BridgeRow]


def _validate_words(words) -> tuple[str, ...]:
    if not isinstance(words, list) or not words:
        raise ValidationError("'words' must be a nonempty list")
    seen = set()
    for i, word in enumerate(words):
        if not isinstance(word, str) or not word:
            raise ValidationError(f"'words' entry {i} is not a nonempty string: {word!r}")
        if word in seen:
            raise ValidationError(f"duplicate word {word!r} in 'words'")
        if word in SPECIAL_TOKENS:
            raise ValidationError(f"word {word!r} collides with a reserved token")
        seen.add(word)
    return tuple(words)


def _validate_speakers(speakers) -> dict[str, str]:
    if not isinstance(speakers, dict) or not speakers:
        raise ValidationError("'speakers' must be a nonempty object of id -> level")
    for speaker, level in speakers.items():
        if not speaker or not isinstance(speaker, str):
            raise ValidationError(f"invalid speaker id {speaker!r}")
        if level not in INTELLIGIBILITY_LEVELS:
            raise ValidationError(
                f"speaker {speaker!r}: unknown intelligibility level {level!r}"
            )
    return dict(speakers)


def _validate_row(record, lineno: int, words: set[str], speakers: dict[str, str],
                  base_dir: Path) -> BridgeRow:
    if not isinstance(record, dict):
        raise ValidationError(f"row {lineno}: expected an object")
    missing = [k for k in _ROW_FIELDS if k not in record]
    if missing:
        raise ValidationError(f"row {lineno}: missing fields {missing}")
    utterance_id = record["utterance_id"]
    if not utterance_id or not isinstance(utterance_id, str):
        raise ValidationError(f"row {lineno}: utterance_id must be a nonempty string")
    if "/" in utterance_id or utterance_id in (".", ".."):
        raise ValidationError(f"row {lineno}: utterance_id {utterance_id!r} is not filesystem-safe")
    if record["speaker_id"] not in speakers:
        raise ValidationError(f"row {lineno}: speaker {record['speaker_id']!r} not declared")
    if record["word"] not in words:
        raise ValidationError(f"row {lineno}: word {record['word']!r} not in 'words'")
    block = record["block"]
    if block not in (1, 2, 3):
        raise ValidationError(f"row {lineno}: block must be 1, 2, or 3")
    channel = record["channel"]
    if not isinstance(channel, int) or channel < 1:
        raise ValidationError(f"row {lineno}: channel must be a positive integer")
    audio = record["audio"]
    if not audio or not isinstance(audio, str):
        raise ValidationError(f"row {lineno}: audio must be a nonempty path")
    # relative audio paths resolve against the manifest's directory
    audio_path = Path(audio)
    if not audio_path.is_absolute():
        audio_path = base_dir / audio_path
    return BridgeRow(
        audio=audio_path,
        utterance_id=utterance_id,
        speaker_id=record["speaker_id"],
        word=record["word"],
        block=int(block),
        channel=channel,
    )


def parse_bridge_manifest(path: str | Path) -> BridgeManifest:
    """Read and validate a bridge job file.

    The file is one JSON object with ``checkpoint``, ``words``,
    ``speakers``, and ``rows``; ``layer`` is optional. Identity problems
    (unknown speakers, duplicate utterance ids, bad blocks) are rejected
    here, before any model work starts; audio files themselves are only
    opened during extraction so one bad recording cannot sink the batch.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read manifest ({exc})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: top level must be a JSON object")
    missing = [k for k in ("checkpoint", "words", "speakers", "rows") if k not in doc]
    if missing:
        raise ValidationError(f"{path}: missing fields {missing}")

    checkpoint = doc["checkpoint"]
    if not checkpoint or not isinstance(checkpoint, str):
        raise ValidationError(f"{path}: 'checkpoint' must be a nonempty string")
    layer = doc.get("layer")
    if layer is not None and not isinstance(layer, int):
        raise ValidationError(f"{path}: 'layer' must be an integer")

    words = _validate_words(doc["words"])
    speakers = _validate_speakers(doc["speakers"])
    if not isinstance(doc["rows"], list) or not doc["rows"]:
        raise ValidationError(f"{path}: 'rows' must be a nonempty list")

    word_set = set(words)
    rows = []
    seen_ids: set[str] = set()
    for i, record in enumerate(doc["rows"]):
        row = _validate_row(record, i + 1, word_set, speakers, path.parent)
        if row.utterance_id in seen_ids:
            raise ValidationError(f"row {i + 1}: duplicate utterance_id {row.utterance_id!r}")
        seen_ids.add(row.utterance_id)
        rows.append(row)
    return BridgeManifest(
        checkpoint=checkpoint, layer=layer, words=words, speakers=speakers, rows=rows
    )


def core_manifest_lines(manifest: BridgeManifest,
                        entries: list[tuple[BridgeRow, str]]) -> str:
    """Render the core-format manifest text for the successfully extracted rows."""
    lines = [
        json.dumps(
            {
                "words": list(manifest.words),
                "speakers": {k: manifest.speakers[k] for k in sorted(manifest.speakers)},
            },
            sort_keys=True,
        )
    ]
    for row, feature_path in entries:
        lines.append(
            json.dumps(
                {
                    "utterance_id": row.utterance_id,
                    "speaker_id": row.speaker_id,
                    "word": row.word,
                    "block": row.block,
                    "channel": row.channel,
                    "feature_path": feature_path,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"
