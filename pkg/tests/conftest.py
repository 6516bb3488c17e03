import numpy as np
import pytest

import corpus_helpers
from protoword.datastore import Corpus, FeatureSequence, Vocabulary


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not corpus_helpers.ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line, ok in corpus_helpers.ACCEPTANCE_LINES:
        verdict = "REPORTED" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"{line}: {verdict}")


@pytest.fixture
def vocab3():
    return Vocabulary(words=("alpha", "bravo", "charlie"))


@pytest.fixture
def small_corpus():
    """3 words, 2 dysarthric speakers + 1 control, all blocks, channel 1 and 2."""
    vocab = Vocabulary(words=("alpha", "bravo", "charlie"))
    rng = np.random.default_rng(42)
    utts = []
    speakers = {"d1": "high", "d2": "low", "c1": "control"}
    for s in sorted(speakers):
        for block in (1, 2, 3):
            for w in range(3):
                for channel in (1, 2):
                    uid = f"{s}_b{block}_w{w}_c{channel}"
                    frames = rng.standard_normal((int(rng.integers(2, 6)), 4))
                    utts.append(
                        FeatureSequence(
                            utterance_id=uid,
                            speaker_id=s,
                            word_id=w,
                            block=block,
                            channel=channel,
                            frames=frames,
                        )
                    )
    return Corpus(vocabulary=vocab, utterances=utts, speakers=speakers)
