import numpy as np
import pytest

from qcurv.geometry import make_flat_torus_factor, make_product, make_sphere_factor, make_synthetic_factor, weyl_spectrum

TWO_PI = 2 * np.pi


@pytest.fixture(scope="session")
def s2xs2():
    f = make_sphere_factor(6)
    return make_product(f, f)


@pytest.fixture(scope="session")
def s2xs2_small():
    f = make_sphere_factor(4)
    return make_product(f, f)


@pytest.fixture(scope="session")
def t4():
    f = make_flat_torus_factor(TWO_PI, TWO_PI, 3)
    return make_product(f, f)


@pytest.fixture(scope="session")
def genus3():
    area = 8 * np.pi
    f = make_synthetic_factor(-1.0, weyl_spectrum(area, 0.7, 60), area)
    return make_product(f, f)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
