"""Run a pretrained speech encoder over audio and write a core-format corpus.

The model is frozen: no gradients, no dropout, single-threaded math so
two runs over the same inputs produce bit-identical feature files. Rows
fail independently (bad path, unreadable file, too-short clip) and are
reported at the end; only a checkpoint that cannot be loaded aborts the
whole run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import audio, bridgefmt
from .errors import RowError, ValidationError

FEATURES_DIRNAME = "features"
DEFAULT_LAYER = -1


def load_model(checkpoint: str):
    """Load a pretrained encoder checkpoint; any failure aborts the run."""
    from transformers import HubertModel

    torch.set_num_threads(1)
    try:
        model = HubertModel.from_pretrained(checkpoint)
    except Exception as exc:
        raise ValidationError(f"checkpoint {checkpoint!r}: cannot load ({exc})") from None
    model.eval()
    return model


def resolve_layer(model, layer: int | None) -> int:
    """Map a user-facing layer index onto the model's hidden-state list.

    The model exposes num_hidden_layers + 1 frame sequences: index 0 is
    the projected convolutional front-end output, index L is the final
    transformer layer. Negative indices count from the end, so the
    default -1 selects the final hidden layer.
    """
    if layer is None:
        layer = DEFAULT_LAYER
    depth = int(model.config.num_hidden_layers) + 1
    if not -depth <= layer < depth:
        raise ValidationError(
            f"layer {layer} out of range for a model with {depth - 1} transformer layers "
            f"(valid: {-depth}..{depth - 1})"
        )
    return layer % depth


def min_samples(model) -> int:
    """Shortest waveform the convolutional front end maps to one frame."""
    length = 1
    for kernel, stride in reversed(
        list(zip(model.config.conv_kernel, model.config.conv_stride))
    ):
        length = (length - 1) * stride + kernel
    return length


def _frame_count(model, num_samples: int) -> int:
    length = num_samples
    for kernel, stride in zip(model.config.conv_kernel, model.config.conv_stride):
        length = (length - kernel) // stride + 1
    return length


def embed(model, waveform: np.ndarray, layer_index: int) -> np.ndarray:
    """One waveform to a [T x D] float32 frame matrix from the chosen layer."""
    wave = torch.from_numpy(np.ascontiguousarray(waveform, dtype=np.float32))
    with torch.no_grad():
        out = model(wave.unsqueeze(0), output_hidden_states=True)
    frames = out.hidden_states[layer_index][0]
    return np.ascontiguousarray(frames.numpy(), dtype=np.float32)


@dataclass
class ExtractResult:
    """What one extraction run produced: the manifest plus per-row failures."""

    manifest_path: Path
    num_written: int
    errors: list[tuple[str, str]]


def extract(manifest: bridgefmt.BridgeManifest, out_dir: str | Path,
            layer: int | None = None) -> ExtractResult:
    """Extract features for every row and write the core corpus layout.

    The layer argument wins over the manifest's ``layer`` field; both
    unset means the final hidden layer. Feature files land under
    ``features/`` as they are produced; the manifest is written last, so
    a crashed run never leaves a loadable but incomplete corpus.
    """
    out_dir = Path(out_dir)
    model = load_model(manifest.checkpoint)
    layer_index = resolve_layer(model, layer if layer is not None else manifest.layer)
    floor = min_samples(model)

    entries: list[tuple[bridgefmt.BridgeRow, str]] = []
    errors: list[tuple[str, str]] = []
    for row in manifest.rows:
        try:
            waveform = audio.load_audio(row.audio)
            if len(waveform) < floor:
                raise RowError(
                    f"{row.audio}: {len(waveform)} samples at 16 kHz is shorter than the "
                    f"model's {floor}-sample minimum"
                )
            frames = embed(model, waveform, layer_index)
            rel = f"{FEATURES_DIRNAME}/{row.utterance_id}.pbf"
            bridgefmt.write_feature_file(frames, out_dir / rel)
        except (RowError, OSError) as exc:
            errors.append((row.utterance_id, str(exc)))
            continue
        entries.append((row, rel))

    if not entries:
        raise ValidationError(
            f"all {len(manifest.rows)} rows failed; first error: {errors[0][1]}"
        )
    manifest_path = out_dir / "manifest.jsonl"
    text = bridgefmt.core_manifest_lines(manifest, entries)
    bridgefmt.atomic_write_bytes(manifest_path, text.encode("utf-8"))
    return ExtractResult(manifest_path=manifest_path, num_written=len(entries), errors=errors)


def expected_frames(model, duration_seconds: float) -> int:
    """Frame count the model yields for a clip of the given duration."""
    return _frame_count(model, int(round(duration_seconds * audio.TARGET_RATE)))
