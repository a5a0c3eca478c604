import numpy as np
import pytest

from plapwave import geometry as geo


def fine_norm_p(U, x, p):
    """Independent W^{1,p} norm^p of the piecewise-linear interpolant of U on nodes x."""
    g = np.diff(U) / np.diff(x)
    return float(np.sum(np.abs(g) ** p * np.diff(x)) + abs(U[0]) ** p + abs(U[-1]) ** p)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(20240611))


@pytest.fixture(scope="session")
def fem16():
    return geo.build_fem_basis(geo.build_mesh(15))


@pytest.fixture(scope="session")
def eig8():
    return geo.build_robin_eigenbasis(geo.build_mesh(64), 8)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, name, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {key:2d}. {name}: {detail}")
