import warnings

import numpy as np
import pytest

from hinfdamp.bench import build_oscillator, desk_spec
from hinfdamp.grad import NonsmoothPointWarning
from hinfdamp.model import VibrationalSystem

from oracles import random_spd


@pytest.fixture(autouse=True)
def _quiet_nonsmooth():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonsmoothPointWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_system(rng, n, p=2, m=2, l=2, alpha=0.05):  # noqa: E741
    M = random_spd(rng, n, 5.0)
    K = random_spd(rng, n, 20.0)
    C_int = alpha * random_spd(rng, n, 5.0)
    B2 = rng.standard_normal((n, p))
    E2 = rng.standard_normal((n, m))
    H1 = rng.standard_normal((l, n))
    return VibrationalSystem(M, K, C_int, B2, E2, H1)


def scalar_system(m=1.0, k=1.0, c=0.1, b=1.0):
    """One mass, one damper, collocated SISO response."""
    return VibrationalSystem([[m]], [[k]], [[c]], [[b]], [[1.0]], [[1.0]])


@pytest.fixture(scope="session")
def desk_b():
    return build_oscillator(desk_spec(1e-2, (3, 11)))


@pytest.fixture(scope="session")
def desk_a():
    return build_oscillator(desk_spec(1e-5, (3, 11)))


_ACCEPTANCE = {}


@pytest.fixture
def acceptance_report():
    """Record the one-line verdict of an acceptance criterion and echo it."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[key])
