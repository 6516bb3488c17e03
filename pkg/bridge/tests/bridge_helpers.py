"""Shared helpers for the bridge test suite."""

import json

import numpy as np
from scipy.io import wavfile

ACCEPTANCE_LINES = []


def record_criterion(line: str, ok: bool) -> None:
    ACCEPTANCE_LINES.append((line, ok))


def make_wav(path, seconds=1.0, rate=16_000, freq=440.0, stereo=False, kind="int16"):
    """Write a sine-tone WAV file; returns the path."""
    t = np.arange(int(round(seconds * rate))) / rate
    x = 0.5 * np.sin(2 * np.pi * freq * t)
    if stereo:
        x = np.stack([x, -x], axis=1)
    if kind == "int16":
        data = (x * 32767).astype(np.int16)
    elif kind == "int32":
        data = (x * (2**31 - 1)).astype(np.int32)
    elif kind == "uint8":
        data = np.round((x + 1.0) * 127.5).astype(np.uint8)
    elif kind == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(kind)
    wavfile.write(path, rate, data)
    return path


def write_job(path, checkpoint, words, speakers, rows, layer=None):
    """Write a bridge job JSON file; returns the path."""
    doc = {"checkpoint": checkpoint, "words": words, "speakers": speakers, "rows": rows}
    if layer is not None:
        doc["layer"] = layer
    path.write_text(json.dumps(doc, indent=2))
    return path
