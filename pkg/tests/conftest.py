import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(rng, d, kappa=None):
    """Random SPD matrix with a random eigenbasis; eigenvalues log-uniform in [1, kappa]."""
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    kappa = kappa if kappa is not None else 10 ** rng.uniform(0, 3)
    eig = np.exp(rng.uniform(0, np.log(kappa), d))
    eig[0], eig[-1] = 1.0, kappa
    return Q @ np.diag(eig) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Store a criterion outcome and echo it; the summary hook prints all of them."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
