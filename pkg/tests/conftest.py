"""Shared corpora and indexes; the expensive ones are session-scoped."""

from __future__ import annotations

import numpy as np
import pytest

from fanns.corpus import generate_synthetic
from fanns.hnsw import hnsw_build
from fanns.ivfflat import ivf_build

# One pass/fail line per acceptance criterion, echoed after the run so the
# lines survive pytest's output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def corpus2k():
    return generate_synthetic(2000, 16, seed=101)


@pytest.fixture(scope="session")
def hnsw2k(corpus2k):
    return hnsw_build(corpus2k, 10, 50, seed=7)


@pytest.fixture(scope="session")
def ivf2k(corpus2k):
    return ivf_build(corpus2k, 45, seed=7)


@pytest.fixture(scope="session")
def corpus20k():
    return generate_synthetic(20000, 16, seed=202)


@pytest.fixture(scope="session")
def hnsw20k(corpus20k):
    return hnsw_build(corpus20k, 10, 50, seed=7)


@pytest.fixture(scope="session")
def ivf20k(corpus20k):
    return ivf_build(corpus20k, 141, seed=7)


@pytest.fixture(scope="session")
def corpus20k_cluster():
    return generate_synthetic(
        20000, 16, seed=303, attr_mode="cluster_correlated", strength=1.0
    )


def sample_queries(corpus, n, seed):
    rng = np.random.default_rng(seed)
    ids = rng.choice(corpus.n, size=n, replace=False)
    return ids, corpus.vectors[ids]
