import time

import pytest

from qari import corpus as ck
from qari.frontend import FrontendConfig, features_from_wav
from qari.synth import synthesize_corpus

ACCEPTANCE_WORDS = [str(i) for i in range(119, 124)] + [str(i) for i in range(133, 138)]

_criteria = []


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record a one-line PASS/FAIL verdict for an acceptance criterion, then assert it."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        _criteria.append(line)
        print(line)
        assert ok, line

    return record


def load_features(records, cfg=None):
    cfg = cfg or FrontendConfig()
    return [(features_from_wav(r.audio_path, cfg, r.file_id), r.transcript) for r in records]


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Seed-42 synthetic corpus: 5 speakers x 10 words x 3 takes."""
    root = tmp_path_factory.mktemp("corpus5")
    synthesize_corpus(42, ACCEPTANCE_WORDS, ck.default_dictionary(), ck.default_phone_set(),
                      5, root, takes=3)
    return ck.load_corpus(root)


@pytest.fixture(scope="session")
def heldout_corpus(tmp_path_factory):
    """Seed-42 synthetic corpus: 10 speakers, the last 3 held out for testing."""
    root = tmp_path_factory.mktemp("corpus10")
    synthesize_corpus(42, ACCEPTANCE_WORDS, ck.default_dictionary(), ck.default_phone_set(),
                      10, root, takes=3, n_test_speakers=3)
    return ck.load_corpus(root)


@pytest.fixture(scope="session")
def heldout_model(heldout_corpus):
    """(model, report, seconds) trained on the 7 training speakers, features included."""
    from qari.trainer import TrainConfig, train

    start = time.perf_counter()
    data = load_features(heldout_corpus.split().train)
    model, report = train(data, heldout_corpus.dictionary, heldout_corpus.phone_set,
                          TrainConfig(), frontend_fingerprint=FrontendConfig().fingerprint())
    return model, report, time.perf_counter() - start
