"""Shared fixtures and independent LP oracles built on scipy."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import linprog

from wassreg.space import Point, make_distribution


def linprog_transport(a, b, C) -> float:
    """``min sum pi C`` over couplings of ``a`` and ``b``; infinite cells fixed at 0.

    Returns ``None`` when no coupling avoids the infinite cells.
    """
    a, b, C = np.asarray(a, float), np.asarray(b, float), np.asarray(C, float)
    N, M = C.shape
    fin = np.isfinite(C)
    A = np.zeros((N + M, N * M))
    for i in range(N):
        A[i, i * M:(i + 1) * M] = 1.0
    for j in range(M):
        A[N + j, j::M] = 1.0
    bounds = [(0, None) if f else (0, 0) for f in fin.ravel()]
    res = linprog(np.where(fin, C, 0.0).ravel(), A_eq=A, b_eq=np.concatenate([a, b]), bounds=bounds, method="highs")
    if res.status == 2:
        return None
    assert res.status == 0
    return float(res.fun)


def linprog_budgeted(mu, ell, C, budget) -> float:
    """``max sum pi ell`` over row-stochastic ``pi`` with ``sum pi C <= budget``."""
    mu, ell, C = np.asarray(mu, float), np.asarray(ell, float), np.asarray(C, float)
    N, M = C.shape
    fin = np.isfinite(C)
    A_eq = np.zeros((N, N * M))
    for i in range(N):
        A_eq[i, i * M:(i + 1) * M] = 1.0
    bounds = [(0, None) if f else (0, 0) for f in fin.ravel()]
    res = linprog(
        -np.tile(ell, N), A_ub=np.where(fin, C, 0.0).reshape(1, -1), b_ub=[budget],
        A_eq=A_eq, b_eq=mu, bounds=bounds, method="highs",
    )
    assert res.status == 0
    return float(-res.fun)


def labeled_data(seed: int, n: int, dim: int):
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(n, dim))
    ys = rng.normal(size=n)
    return make_distribution([Point.labeled(x, y) for x, y in zip(xs, ys)], np.full(n, 1.0 / n))


def binary_data(seed: int, n: int, dim: int):
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(n, dim))
    ys = np.where(rng.uniform(size=n) < 0.5, -1, 1)
    return make_distribution([Point.binary(x, int(y)) for x, y in zip(xs, ys)], np.full(n, 1.0 / n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
