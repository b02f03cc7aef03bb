import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_density(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def literal_step(n_sites, theta, phi_m, tau=0.0):
    """Periodic step built entry by entry from the two-ring amplitude update

        alpha_n' = (alpha_{n-1} cos + i beta_{n-1} sin) e^{i phi_m}
        beta_n'  =  i alpha_{n+1} sin + beta_{n+1} cos

    in the interleaved basis.  Used as an independent oracle.
    """
    c, s = np.cos(theta + tau), np.sin(theta + tau)
    d = 2 * n_sites
    u = np.zeros((d, d), complex)
    for n in range(n_sites):
        left, right = (n - 1) % n_sites, (n + 1) % n_sites
        u[2 * n, 2 * left] += c * np.exp(1j * phi_m)
        u[2 * n, 2 * left + 1] += 1j * s * np.exp(1j * phi_m)
        u[2 * n + 1, 2 * right] += 1j * s
        u[2 * n + 1, 2 * right + 1] += c
    return u


def literal_floquet(params, tau=0.0):
    n = params.n_sites
    return literal_step(n, params.theta2, -params.phi, tau) @ literal_step(n, params.theta1, params.phi, tau)
