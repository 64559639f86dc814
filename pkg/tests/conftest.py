import numpy as np
import pytest

from shapeadv import classifier as clf
from shapeadv.data import ShapeSpec, make_cloud


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_model():
    """Untrained 4-class network; enough for gradient and contract checks."""
    return clf.ClassifierModel.init(4, seed=3)


@pytest.fixture(scope="session")
def star_cloud():
    return make_cloud(ShapeSpec("star", m=128, jitter=0.005, seed=1), label=0)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def record(n, ok, detail):
        lines[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    lines = terminalreporter.config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
