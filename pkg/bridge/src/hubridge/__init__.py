"""Adapter that turns audio plus a pretrained speech encoder into PBF1 corpora."""

from .audio import TARGET_RATE, load_audio
from .bridgefmt import (
    BridgeManifest,
    BridgeRow,
    parse_bridge_manifest,
    write_feature_file,
)
from .errors import RowError, ValidationError
from .extract import ExtractResult, expected_frames, extract, load_model

__all__ = [
    "BridgeManifest",
    "BridgeRow",
    "ExtractResult",
    "RowError",
    "TARGET_RATE",
    "ValidationError",
    "expected_frames",
    "extract",
    "load_audio",
    "load_model",
    "parse_bridge_manifest",
    "write_feature_file",
]
