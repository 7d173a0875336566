import numpy as np
import pytest

from ppnorm import binarykey as bk
from ppnorm import paillier as pl
from ppnorm import plda
from ppnorm import synthcorpus as sc


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")


SMALL = dict(cohort_speakers=32, train_speakers=100, trial_speakers=20, nontargets_per_probe=4)


@pytest.fixture(scope="session")
def small_corpus():
    return sc.build_corpus(sc.CorpusConfig(**SMALL))


@pytest.fixture(scope="session")
def backend(small_corpus):
    """(kbm, model, form) trained on the small corpus."""
    kbm = bk.build_kbm(small_corpus.ubm, [s.frames for s in small_corpus.by_role("anchor")])
    X, y = sc.training_set(small_corpus)
    model = plda.fit_backend(X, y)
    return kbm, model, plda.scoring_form(model)


@pytest.fixture(scope="session")
def key512():
    return pl.keygen(512, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
