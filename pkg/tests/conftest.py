import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("hamloc", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hamloc")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    from hamloc.synthetic import SynthConfig, generate, split

    corpus = generate(SynthConfig(num_videos=12, num_test_videos=4, length_range=(30, 40), seed=3))
    tr, va, te = split(corpus, 0.3, 0)
    return corpus.with_splits(tr, va, te)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
