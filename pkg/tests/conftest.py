import numpy as np
import pytest

from fcascade.beam import BeamParams, assemble
from fcascade.model import scalar_cubic_model


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def beam32():
    return assemble(BeamParams(N=32))


@pytest.fixture(scope="session")
def beam16():
    return assemble(BeamParams(N=16))


@pytest.fixture(scope="session")
def scalar():
    return scalar_cubic_model()


def random_hurwitz(rng, n):
    """Dense matrix with spectrum in Re < -0.1."""
    X = rng.standard_normal((n, n))
    w = np.max(np.linalg.eigvals(X).real)
    return X - (w + 0.1 + rng.uniform(0, 1)) * np.eye(n)


def random_skew(rng, m):
    X = rng.standard_normal((m, m))
    return X - X.T


def random_spd(rng, n):
    X = rng.standard_normal((n, n))
    return X @ X.T + n * np.eye(n)


ACCEPTANCE = []


def record_verdict(number, title, passed, detail=""):
    """Store and print one acceptance verdict line."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}  {detail}".rstrip()
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
