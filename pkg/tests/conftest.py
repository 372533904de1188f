"""Shared fixtures and the acceptance summary printed at the end of a run."""
import numpy as np
import pytest
from scipy.integrate import quad

ACCEPTANCE = {}


def line_ronkin_oracle(x):
    """Ronkin function of ``1 + z1 + z2`` by Jensen's formula in ``z1`` and adaptive quadrature in ``theta2``.

    ``(2 pi)^-1 int log|a + z1| d theta1 = max(log|a|, x1)``, leaving a one-dimensional
    integral that is independent of the package's tensor trapezoid rule.
    """
    def f(t):
        return max(np.log(abs(1 + np.exp(x[1] + 1j * t))), x[0])

    return quad(f, 0, 2 * np.pi, limit=400, points=[np.pi], epsabs=1e-13, epsrel=1e-13)[0] / (2 * np.pi)


@pytest.fixture(scope="session")
def line_amoeba():
    from amoebalab.classical import ClassicalAmoeba

    return ClassicalAmoeba(box=(-6, 6, -6, 6), grid=300, fibers=600, angles=64).fit("1 + z1 + z2")


@pytest.fixture(scope="session")
def ms1():
    from amoebalab.generalized import build_marked_sphere

    return build_marked_sphere([0, 1], [[1, 0], [0, 1]], -1)


@pytest.fixture(scope="session")
def ms1_fit(ms1):
    from amoebalab.generalized import GeneralizedAmoeba

    return GeneralizedAmoeba(box=(-6, 6, -6, 6), grid=200, samples=2_000_000, seed=0).fit(ms1)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
