import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import write_bydate_corpus  # noqa: E402

from cryptext.corpus import load_fixture  # noqa: E402
from cryptext.textprep import preprocess_corpus  # noqa: E402
from cryptext.wordcrypt import derive_context  # noqa: E402

REAL_CORPUS_ENV = "CRYPTEXT_20NG_ROOT"


@pytest.fixture(scope="session")
def fixture_corpus():
    return load_fixture()


@pytest.fixture(scope="session")
def fixture_tokens(fixture_corpus):
    return preprocess_corpus(fixture_corpus)


@pytest.fixture(scope="session")
def ctx():
    return derive_context("correct horse battery staple")


@pytest.fixture(scope="session")
def synth4_root(tmp_path_factory):
    """Four-category corpus in the bydate layout, 60 train / 25 test per class."""
    root = tmp_path_factory.mktemp("synth4")
    return write_bydate_corpus(root, ["alt.alpha", "comp.beta", "rec.gamma", "sci.delta"],
                               n_train=60, n_test=25, seed=11, topic_share=0.3)


@pytest.fixture
def passphrase_env(monkeypatch):
    monkeypatch.setenv("CRYPTEXT_PASSPHRASE", "correct horse battery staple")
    return "CRYPTEXT_PASSPHRASE"


@pytest.fixture(scope="session")
def real_corpus_root():
    root = os.environ.get(REAL_CORPUS_ENV)
    if not root or not Path(root).is_dir():
        pytest.skip(f"20 Newsgroups bydate tree not available (set {REAL_CORPUS_ENV})")
    return Path(root)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
