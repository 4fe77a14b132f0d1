import numpy as np
import pytest

from hiercl.hierarchy import build_tree, load_tree
from hiercl.prototypes import init_bank


@pytest.fixture(scope="session")
def toy():
    return load_tree("toy3")


@pytest.fixture(scope="session")
def fair1m():
    return load_tree("fair1m")


@pytest.fixture(scope="session")
def shiprs():
    return load_tree("shiprs")


@pytest.fixture(scope="session")
def ship_star():
    return build_tree([("Warship", "Ship"), ("Merchant", "Ship")])


def unit_rows(rng, n, dim):
    F = rng.standard_normal((n, dim))
    return F / np.linalg.norm(F, axis=1, keepdims=True)


def random_labels(rng, tree, n, n_classes=None, truncate=0.0):
    leaves = tree.leaves()
    k = len(leaves) if n_classes is None else min(n_classes, len(leaves))
    pool = rng.choice(leaves, size=k, replace=False)
    labels = [tree.path(int(rng.choice(pool))) for _ in range(n)]
    if truncate:
        labels = [lab[: int(rng.integers(1, len(lab) + 1))] if rng.random() < truncate else lab
                  for lab in labels]
    return labels


def bank_for(tree, dim, seed=0):
    return init_bank(tree, dim, seed=seed)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
