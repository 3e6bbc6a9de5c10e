import numpy as np
import pytest

from sermlp import synth

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corpus_1000(tmp_path_factory):
    """The n=1000, 5-session synthetic corpus shared by the end-to-end checks."""
    out = tmp_path_factory.mktemp("corpus_1000")
    synth.gen_synthetic_corpus(1000, 5, 2024, out)
    return out


@pytest.fixture(scope="session")
def corpus_small(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus_small")
    synth.gen_synthetic_corpus(60, 5, 7, out)
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
