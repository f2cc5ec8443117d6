"""Shared oracles and fixtures.

The oracles here are deliberately naive (dense solves, full sorts, loops)
and do not reuse the package's code paths they check.
"""

import numpy as np
import pytest

from lapmotion.graph import build_graph, laplacian
from lapmotion.spectral import eigendecompose


def central_diff(fn, x, h):
    """Entrywise central differences of a scalar function of an array."""
    x = np.array(x, dtype=float)
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        saved = x[idx]
        x[idx] = saved + h
        up = fn(x)
        x[idx] = saved - h
        down = fn(x)
        x[idx] = saved
        out[idx] = (up - down) / (2 * h)
    return out


def rel_err(analytic, numeric):
    """max |a - n| / max(|a|, |n|, 1e-6 * max(1, max|n|)), entrywise."""
    a = np.atleast_1d(np.asarray(analytic, float))
    n = np.atleast_1d(np.asarray(numeric, float))
    floor = 1e-6 * max(1.0, np.abs(n).max())
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def dense_smooth(lap_dense, eta, signal):
    """Solve (I + eta L) s = signal directly."""
    n = lap_dense.shape[0]
    return np.linalg.solve(np.eye(n) + eta * lap_dense, signal)


def brute_knn(points, k):
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def random_points(rng, n, spread=0.3):
    return rng.uniform(-spread, spread, (n, 4))


def full_basis(rng, n, kind="plain", spread=0.3, k=8):
    g = build_graph(random_points(rng, n, spread), k=min(k, n - 1), sigma=0.1)
    lap = laplacian(g, kind)
    return g, lap, eigendecompose(lap, n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# PASS/FAIL lines recorded by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
