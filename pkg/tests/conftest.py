import numpy as np
import pytest

from pram.core import Dataset, validate_transition


def random_transition(g: np.random.Generator, k: int, floor: float = 0.5) -> np.ndarray:
    """Column-stochastic matrix with diagonal at least ``floor``, so it is invertible."""
    off = g.dirichlet(np.ones(k - 1), size=k) * (1.0 - floor) * g.uniform(0.0, 1.0, size=(k, 1))
    p = np.zeros((k, k))
    for j in range(k):
        p[np.arange(k) != j, j] = off[j]
        p[j, j] = 1.0 - off[j].sum()
    return p


def logistic_data(g, n=800, p=None, k=2, beta=(-1.0, 1.5)):
    x = g.normal(0.5, 1.0, n)
    y = (g.random(n) < 1.0 / (1.0 + np.exp(-(beta[0] + beta[1] * x)))).astype(int)
    star = y.copy()
    if p is not None:
        cum = np.cumsum(p, axis=0)
        u = g.random(n)
        star = (u[:, None] >= cum[:, y].T).sum(axis=1).clip(0, k - 1)
    return Dataset({"x": x}, k=k, sensitive_name="y", original=y, perturbed=star)


def linear_data(g, n=800, p=None, beta=(-1.0, 1.0)):
    x = (g.random(n) < 0.5).astype(int)
    y = beta[0] + beta[1] * x + g.normal(size=n)
    star = x.copy()
    if p is not None:
        cum = np.cumsum(p, axis=0)
        star = (g.random(n)[:, None] >= cum[:, x].T).sum(axis=1).clip(0, 1)
    return Dataset({"y": y}, k=2, sensitive_name="x", original=x, perturbed=star)


@pytest.fixture
def g():
    return np.random.default_rng(20240611)


@pytest.fixture
def P85():
    return validate_transition([[0.85, 0.15], [0.15, 0.85]])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
