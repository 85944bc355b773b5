import numpy as np
import pytest

from qbeats.beats import default_tau_grid, g2_fixed_coupling
from qbeats.hilbert import build_basis
from qbeats.liouville import SystemParams, make_generator, steady_state


@pytest.fixture(scope="session")
def params():
    return SystemParams()


@pytest.fixture(scope="session")
def basis():
    return build_basis(n1_max=3, n2_max=2)


@pytest.fixture(scope="session")
def small_basis():
    """Dimension 24: the largest basis the dense Kronecker oracle is run on."""
    return build_basis(n1_max=1, n2_max=1)


@pytest.fixture(scope="session")
def generator(params, basis):
    return make_generator(params, basis)


@pytest.fixture(scope="session")
def rho_ss(generator):
    return steady_state(generator)


@pytest.fixture(scope="session")
def g2_trace(params, basis):
    return g2_fixed_coupling(params, basis, default_tau_grid(40.0, 4096))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_density(d, rng, rank=None):
    rank = rank or d
    x = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = x @ x.conj().T
    return rho / np.trace(rho).real


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance lines (one per criterion) after the test report."""
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results, key=lambda k: int(k[2:])):
        terminalreporter.write_line(results[name])
