import numpy as np
import pytest

from bergman_lab.kernel import build_kernel
from bergman_lab.weights import make_weight

FOCK = {"family": "fock", "n": 1}
QUARTIC = {"family": "radial_power", "n": 1, "params": {"m": 2}}
FOCK2 = {"family": "fock", "n": 2}
GAMMA = {"family": "gamma_monomials", "n": 2, "params": {"gamma": [[1, 0], [0, 2]]}}


@pytest.fixture(scope="session")
def fock():
    return make_weight(FOCK)


@pytest.fixture(scope="session")
def quartic():
    return make_weight(QUARTIC)


@pytest.fixture(scope="session")
def fock2():
    return make_weight(FOCK2)


@pytest.fixture(scope="session")
def gamma_weight():
    return make_weight(GAMMA)


@pytest.fixture(scope="session")
def fock_model(fock):
    return build_kernel(fock, 64)


@pytest.fixture(scope="session")
def quartic_model(quartic):
    return build_kernel(quartic, 64)


def rho_v_closed(s):
    """rho_V for V = 16|z|^2 at |x| = s: the root of 4 r (s + r) = 1."""
    s = np.asarray(s, float)
    return (np.sqrt(s * s + 1) - s) / 2


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
