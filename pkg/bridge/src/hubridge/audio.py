"""Audio loading: any supported file to mono float32 at 16 kHz.

WAV files are decoded with scipy, which covers the common PCM encodings
plus float frames. FLAC needs the optional soundfile package; without it
a FLAC row fails with a clear message instead of crashing the run.
Integer samples are rescaled to [-1, 1); multi-channel audio is averaged
to mono before resampling.
"""

from __future__ import annotations

from math import gcd
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import RowError

TARGET_RATE = 16_000

# full-scale divisors for the integer PCM encodings scipy can return
_INT_SCALE = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
}


def _to_float(samples: np.ndarray, path: Path) -> np.ndarray:
    if samples.dtype in _INT_SCALE:
        return samples.astype(np.float64) / _INT_SCALE[samples.dtype]
    if samples.dtype == np.uint8:
        # 8-bit WAV is unsigned with midpoint 128
        return (samples.astype(np.float64) - 128.0) / 128.0
    if samples.dtype in (np.float32, np.float64):
        return samples.astype(np.float64)
    raise RowError(f"{path}: unsupported sample format {samples.dtype}")


def _read_wav(path: Path) -> tuple[int, np.ndarray]:
    try:
        rate, samples = wavfile.read(path)
    except ValueError as exc:
        raise RowError(f"{path}: cannot decode WAV ({exc})") from None
    return rate, _to_float(np.asarray(samples), path)


def _read_flac(path: Path) -> tuple[int, np.ndarray]:
    try:
        import soundfile
    except ImportError:
        raise RowError(
            f"{path}: FLAC input needs the optional soundfile package"
        ) from None
    try:
        samples, rate = soundfile.read(path, dtype="float64")
    except Exception as exc:
        raise RowError(f"{path}: cannot decode FLAC ({exc})") from None
    return rate, np.asarray(samples)


def load_audio(path: str | Path) -> np.ndarray:
    """Decode one audio file to a mono float32 waveform at 16 kHz."""
    path = Path(path)
    if not path.is_file():
        raise RowError(f"{path}: audio file not found")
    suffix = path.suffix.lower()
    if suffix == ".wav":
        rate, samples = _read_wav(path)
    elif suffix == ".flac":
        rate, samples = _read_flac(path)
    else:
        raise RowError(f"{path}: unsupported audio format {suffix!r} (expected .wav or .flac)")

    if samples.size == 0:
        raise RowError(f"{path}: audio stream is empty")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    elif samples.ndim != 1:
        raise RowError(f"{path}: unexpected sample layout with {samples.ndim} axes")
    if not np.isfinite(samples).all():
        raise RowError(f"{path}: audio contains non-finite samples")

    if rate != TARGET_RATE:
        if rate < 1:
            raise RowError(f"{path}: invalid sample rate {rate}")
        g = gcd(TARGET_RATE, rate)
        samples = resample_poly(samples, TARGET_RATE // g, rate // g)
    return np.ascontiguousarray(samples, dtype=np.float32)
