import logging
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from spatialnmf.dataset import normalize_and_log  # noqa: E402
from spatialnmf.synthetic import SyntheticSpec, generate  # noqa: E402


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


def planted_graph(rng, n, blocks=2, p_in=0.9, p_out=0.05, weighted=False):
    labels = rng.integers(0, blocks, n)
    P = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    U = np.triu(rng.random((n, n)) < P, 1).astype(float)
    if weighted:
        U *= rng.uniform(0.5, 2.0, (n, n))
    return U + U.T, labels


@pytest.fixture(autouse=True)
def _reset_package_logger():
    # the CLI installs its own stderr handler; undo it so caplog keeps working
    yield
    log = logging.getLogger("spatialnmf")
    log.handlers[:] = []
    log.propagate = True
    log.setLevel(logging.NOTSET)


@pytest.fixture(scope="session")
def small_synth():
    """1200 cells, 3 voronoi domains, log-normalized, with ground truth."""
    spec = SyntheticSpec(1200, 60, 3, "voronoi", noise_rate=0.3, seed=3)
    ds, truth = generate(spec)
    return spec, normalize_and_log(ds), truth


@pytest.fixture(scope="session")
def two_domain():
    """2000 cells in two stripes at the default signal and noise levels."""
    spec = SyntheticSpec(2000, 40, 2, "stripes", seed=1)
    ds, truth = generate(spec)
    return spec, normalize_and_log(ds), truth
