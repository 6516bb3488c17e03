"""Shared helpers for the test suite: corpus builders and the scorecard."""

import numpy as np

from protoword.datastore import FeatureSequence

ACCEPTANCE_LINES = []


def record_criterion(line: str, ok: bool | None) -> None:
    """Queue a scorecard line; ok=None marks a reported-only figure."""
    ACCEPTANCE_LINES.append((line, ok))


def make_utterance(uid, speaker, word_id, block=1, channel=1, frames=None, dim=4, t=3, seed=0):
    if frames is None:
        rng = np.random.default_rng(seed)
        frames = rng.standard_normal((t, dim))
    return FeatureSequence(
        utterance_id=uid,
        speaker_id=speaker,
        word_id=word_id,
        block=block,
        channel=channel,
        frames=frames,
    )
