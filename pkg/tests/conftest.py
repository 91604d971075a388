import numpy as np
import pytest

from treeept.params import EptParams
from treeept.tree import TreeMeasure, build_tree


@pytest.fixture
def star():
    """Root 0 with two unit edges to nodes 1 and 2."""
    return build_tree([None, 0, 0], [0.0, 1.0, 1.0])


@pytest.fixture
def chain():
    """0 -> 1 -> 2 with lengths 2 and 3."""
    return build_tree([None, 0, 1], [0.0, 2.0, 3.0])


@pytest.fixture
def unit_params():
    """b = lambda = 1, constant weights 1, alpha = 0."""
    return EptParams.symmetric(b=1.0, lam=1.0, alpha=0.0, a1=0.0, a0=1.0)


@pytest.fixture
def delta():
    def make(node, mass=1.0):
        return TreeMeasure.from_mapping({node: mass})

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Print and record one pass/fail line per acceptance criterion, then assert it."""

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        request.config.stash.setdefault(_ACCEPTANCE, []).append(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
