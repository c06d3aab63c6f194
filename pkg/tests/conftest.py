import logging

import numpy as np
import pytest

from aamse import corpus
from aamse.core import SAMPLE_RATE, Waveform

# small protocol, 3 training and 1 test utterance, 2 test SNRs
SMALL_PLAN = corpus.MixPlan(
    train_snrs=(-5.0, 5.0),
    test_snrs=(-5.0, 5.0),
    noises_per_utterance=2,
    n_test_noises=2,
    n_test_utterances=1,
)


def tone(freq, dur=1.0, amp=0.5, rate=SAMPLE_RATE):
    tvec = np.arange(int(dur * rate)) / rate
    return Waveform(amp * np.sin(2 * np.pi * freq * tvec), rate)


@pytest.fixture(autouse=True)
def reset_package_logger():
    # the command line detaches the package logger from the root one
    yield
    log = logging.getLogger("aamse")
    log.handlers[:] = []
    log.setLevel(logging.NOTSET)
    log.propagate = True


@pytest.fixture(scope="session")
def small_corpus():
    # 4 noises, no babble in the pool keeps this fast
    return corpus.synth_corpus(4, 1.0, 1.0, seed=3, n_noises=4)


@pytest.fixture(scope="session")
def small_manifest(small_corpus):
    items, pool = small_corpus
    return corpus.build_manifest(items, pool, SMALL_PLAN)


@pytest.fixture(scope="session")
def written_corpus(small_corpus, small_manifest, tmp_path_factory):
    items, pool = small_corpus
    root = tmp_path_factory.mktemp("corpus")
    corpus.write_corpus(items, pool, small_manifest, str(root))
    return str(root), corpus.read_manifest(str(root / "manifest.tsv"))
