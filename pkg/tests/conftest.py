import numpy as np
import pytest
from hypothesis import settings

from tclgen.baths import DiscreteBath, Mode, correlation_from_spectral_density, SpectralDensity
from tclgen.liouville import SIGMA_X, SIGMA_Z, SystemModel

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_complex(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def random_hermitian(rng, d):
    A = random_complex(rng, (d, d))
    return (A + A.conj().T) / 2


def random_density(rng, d):
    A = random_complex(rng, (d, d))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def spin_bath():
    """Three bath qubits with spread frequencies (non-Gaussian)."""
    return DiscreteBath((Mode(0.7, 0.5, "qubit"), Mode(1.3, 0.4, "qubit"), Mode(2.1, 0.3, "qubit")))


@pytest.fixture(scope="session")
def oscillator_bath():
    return DiscreteBath((Mode(1.0, 0.3, "oscillator", 6), Mode(2.0, 0.2, "oscillator", 6)))


@pytest.fixture(scope="session")
def qubit_x_model():
    """H_S = sigma_z / 2 coupled through sigma_x."""
    return SystemModel(0.5 * SIGMA_Z, SIGMA_X)


@pytest.fixture(scope="session")
def ohmic():
    return correlation_from_spectral_density(SpectralDensity("ohmic", eta=0.1, omega_c=5.0))


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            lines += [value for name, value in rep.user_properties if name == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
