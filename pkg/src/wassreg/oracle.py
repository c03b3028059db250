"""Exact ground truth on finite grids.

* :func:`wasserstein_discrete` solves the transportation LP with a network
  simplex (Bland's rule, infinite-cost cells handled lexicographically).
* :func:`sup_over_grid` solves the budgeted transportation LP
  ``max sum pi_ij ell_j`` s.t. row sums ``mu`` and ``sum pi_ij c_ij <= delta^r``
  through its one-dimensional convex piecewise-linear dual
  ``g(rho) = rho delta^r + sum_i mu_i max_j (ell_j - rho c_ij)``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .costs import CostSpec, cost_matrix
from .errors import InfeasibleTransport, NoFiniteCostColumn, WitnessNotFound
from .losses import (
    BINARY_CROSS_ENTROPY,
    PER_POINT,
    LossSpec,
    anchor_constant,
    eval_loss,
    eval_psi,
    saturation_point,
    witness,
)
from .space import LABELED, Coupling, DiscreteDistribution, Point, expectation

Trace = Callable[[dict], None]

# epsilon levels, as fractions of L, used for grid witnesses
GRID_EPSILON_LEVELS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
# extra probes for the bounded cross-entropy loss when no witness exists
_BCE_EDGE_PROBES = (1e-3, 1e-6, 1e-9)


# ---------------------------------------------------------------------------
# transportation LP


def _tree_potentials(N: int, M: int, basis: list[tuple[int, int]], C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    adj: list[list[tuple[int, int, int]]] = [[] for _ in range(N + M)]
    for i, j in basis:
        adj[i].append((N + j, i, j))
        adj[N + j].append((i, i, j))
    u = np.full(N, np.nan)
    v = np.full(M, np.nan)
    u[0] = 0.0
    queue = deque([0])
    seen = np.zeros(N + M, dtype=bool)
    seen[0] = True
    while queue:
        node = queue.popleft()
        for other, i, j in adj[node]:
            if seen[other]:
                continue
            seen[other] = True
            if other >= N:
                v[j] = C[i, j] - u[i]
            else:
                u[i] = C[i, j] - v[j]
            queue.append(other)
    return u, v


def _tree_path(N: int, M: int, basis: list[tuple[int, int]], start: int, goal: int) -> list[tuple[int, int]]:
    """Basic cells on the tree path from node ``start`` to node ``goal``."""
    adj: list[list[tuple[int, int, int]]] = [[] for _ in range(N + M)]
    for i, j in basis:
        adj[i].append((N + j, i, j))
        adj[N + j].append((i, i, j))
    parent: dict[int, tuple[int, tuple[int, int]] | None] = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for other, i, j in adj[node]:
            if other not in parent:
                parent[other] = (node, (i, j))
                queue.append(other)
    cells = []
    node = goal
    while parent[node] is not None:
        prev, cell = parent[node]
        cells.append(cell)
        node = prev
    cells.reverse()
    return cells


def transport_simplex(a: np.ndarray, b: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Optimal coupling for ``min sum pi_ij C_ij`` with marginals ``a`` and ``b``.

    Infinite cells get a lexicographic penalty (first cost component 1) so
    they leave the basis whenever a finite coupling exists.  Entering and
    leaving cells follow Bland's rule.

    Raises
    ------
    InfeasibleTransport
        If every coupling puts mass on an infinite cell.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    N, M = C.shape
    inf_cell = ~np.isfinite(C)
    pen = inf_cell.astype(float)
    fin = np.where(inf_cell, 0.0, C)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(fin))) if fin.size else 1.0)

    flow = np.zeros((N, M))
    basis: list[tuple[int, int]] = []
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while True:
        x = max(0.0, min(ra[i], rb[j]))
        flow[i, j] = x
        basis.append((i, j))
        ra[i] -= x
        rb[j] -= x
        if i == N - 1 and j == M - 1:
            break
        if i == N - 1:
            j += 1
        elif j == M - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    is_basic = np.zeros((N, M), dtype=bool)
    for cell in basis:
        is_basic[cell] = True

    for _ in range(50 * N * M + 1000):
        u1, v1 = _tree_potentials(N, M, basis, pen)
        u2, v2 = _tree_potentials(N, M, basis, fin)
        r1 = pen - u1[:, None] - v1[None, :]
        r2 = fin - u2[:, None] - v2[None, :]
        improving = ((r1 < -0.5) | ((np.abs(r1) < 0.5) & (r2 < -tol))) & ~is_basic
        candidates = np.flatnonzero(improving)
        if candidates.size == 0:
            break
        ei, ej = divmod(int(candidates[0]), M)
        path = _tree_path(N, M, basis, N + ej, ei)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min((c for c in minus if flow[c] <= theta), key=lambda c: c[0] * M + c[1])
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ei, ej] += theta
        flow[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
        is_basic[leaving] = False
        is_basic[ei, ej] = True
    else:  # pragma: no cover - Bland's rule terminates
        raise RuntimeError("transportation simplex did not converge")

    flow = np.maximum(flow, 0.0)
    # rounding dust in the marginals may be forced onto infinite cells
    dust = inf_cell & (flow <= 1e-12 * max(float(a.sum()), 1.0))
    flow[dust] = 0.0
    if np.any(flow[inf_cell] > 0.0):
        raise InfeasibleTransport("every coupling uses an infinite-cost cell")
    return flow


def wasserstein_coupling(
    cost: CostSpec, r: float, P: DiscreteDistribution, Q: DiscreteDistribution
) -> tuple[float, Coupling]:
    """Wasserstein discrepancy and an optimal coupling of ``P`` and ``Q``."""
    C = cost_matrix(cost, Q.atoms, P.atoms, r).T
    flow = transport_simplex(P.weights, Q.weights, C)
    mask = flow > 0.0
    total = float(np.sum(flow[mask] * C[mask]))
    coupling = Coupling(flow, P.weights, Q.weights)
    return total ** (1.0 / r), coupling


def wasserstein_discrete(cost: CostSpec, r: float, P: DiscreteDistribution, Q: DiscreteDistribution) -> float:
    """``W_{d,r}(P, Q) = (min_pi sum pi_ij d^r)^(1/r)`` solved exactly.

    Raises
    ------
    InfeasibleTransport
    """
    return wasserstein_coupling(cost, r, P, Q)[0]


# ---------------------------------------------------------------------------
# budgeted LP


@dataclass(frozen=True)
class BudgetedLpSolution:
    """Optimum of the grid-restricted worst-case problem.

    ``value`` is the primal objective of ``coupling`` (always feasible);
    ``dual_value`` is the smallest dual objective ``g(rho)`` found.
    """

    value: float
    coupling: Coupling
    marginal_q: np.ndarray
    rho_star: float
    tight: bool
    dual_value: float
    budget_used: float


@dataclass
class _RowStats:
    rho: float
    g: float
    jmin: np.ndarray
    jmax: np.ndarray
    cmin: float
    cmax: float


def _row_stats(rho: float, mu: np.ndarray, ell: np.ndarray, C: np.ndarray, finite: np.ndarray,
               Cf: np.ndarray, budget: float) -> _RowStats:
    V = np.where(finite, ell[None, :] - rho * Cf, -np.inf)
    m = V.max(axis=1)
    scale = np.abs(m)[:, None] + np.abs(ell)[None, :] + rho * Cf
    ties = finite & (V >= m[:, None] - 1e-12 * scale)
    low = np.where(ties, Cf, np.inf)
    high = np.where(ties, Cf, -np.inf)
    jmin = np.argmin(low, axis=1)
    jmax = np.argmax(high, axis=1)
    rows = np.arange(C.shape[0])
    active = mu > 0
    cmin = float(mu[active] @ Cf[rows, jmin][active])
    cmax = float(mu[active] @ Cf[rows, jmax][active])
    g = rho * budget + float(mu[active] @ m[active])
    return _RowStats(rho, g, jmin, jmax, cmin, cmax)


def solve_budgeted_lp(
    mu: np.ndarray, ell: np.ndarray, C: np.ndarray, budget: float, trace: Trace | None = None
) -> BudgetedLpSolution:
    """Solve ``max sum pi ell`` over row-stochastic ``pi`` with ``sum pi C <= budget``.

    ``C`` may hold ``inf``; such cells never carry mass.

    Raises
    ------
    NoFiniteCostColumn
        If an atom has no finite-cost column, or no column choice fits the budget.
    """
    mu = np.asarray(mu, dtype=float)
    ell = np.asarray(ell, dtype=float)
    C = np.asarray(C, dtype=float)
    finite = np.isfinite(C)
    active = mu > 0
    if np.any(~finite.any(axis=1) & active):
        raise NoFiniteCostColumn("an atom has no finite-cost grid point")
    Cf = np.where(finite, C, 0.0)
    N = C.shape[0]
    rows = np.arange(N)

    def stats(rho: float) -> _RowStats:
        s = _row_stats(rho, mu, ell, C, finite, Cf, budget)
        if trace is not None:
            trace({"rho": s.rho, "g": s.g, "subgrad_right": budget - s.cmin, "subgrad_left": budget - s.cmax})
        return s

    cheapest = np.where(finite, Cf, np.inf).min(axis=1)
    if float(mu[active] @ cheapest[active]) > budget * (1.0 + 1e-12) + 1e-300:
        raise NoFiniteCostColumn("no column choice fits within the transport budget")

    probes: list[_RowStats] = []
    s0 = stats(0.0)
    probes.append(s0)
    if s0.cmin <= budget:
        best, lo_cols, hi_cols = s0, s0.jmin, s0.jmin
    else:
        positive = Cf[finite & (Cf > 0)]
        spread = float(ell.max() - ell.min())
        rho_max = spread / float(positive.min()) if positive.size and spread > 0 else 1.0
        hi = stats(max(rho_max, 1e-300))
        probes.append(hi)
        for _ in range(2000):
            if hi.cmax <= budget:
                break
            hi = stats(hi.rho * 2.0 + 1.0)
            probes.append(hi)
        lo = s0
        best = None
        for _ in range(500):
            if hi.cmin <= budget <= hi.cmax:
                best = hi
                break
            slope_lo = budget - lo.cmin
            slope_hi = budget - hi.cmax
            denom = slope_lo - slope_hi
            x = (hi.g - lo.g + slope_lo * lo.rho - slope_hi * hi.rho) / denom if denom != 0 else math.nan
            if not lo.rho < x < hi.rho:
                x = 0.5 * (lo.rho + hi.rho)
            mid = stats(x)
            probes.append(mid)
            if mid.cmin <= budget <= mid.cmax:
                best = mid
                break
            if mid.cmin > budget:
                lo = mid
            else:
                hi = mid
            if hi.rho - lo.rho <= 1e-12 * (1.0 + hi.rho):
                break
        if best is not None:
            lo_cols, hi_cols = best.jmin, best.jmax
        else:
            best = hi
            lo_cols, hi_cols = hi.jmin, lo.jmax

    pi = np.zeros_like(Cf)
    pi[rows, lo_cols] = mu
    used = float(mu[active] @ Cf[rows, lo_cols][active])
    remaining = budget - used
    for i in range(N):
        if remaining <= 0.0:
            break
        a, b = lo_cols[i], hi_cols[i]
        extra = mu[i] * (Cf[i, b] - Cf[i, a])
        if extra <= 0.0 or mu[i] == 0.0:
            continue
        theta = min(1.0, remaining / extra)
        pi[i, a] = mu[i] * (1.0 - theta)
        pi[i, b] += mu[i] * theta
        remaining -= theta * extra
    mask = pi > 0
    value = float(np.sum(pi[mask] * ell[np.nonzero(mask)[1]]))
    used = float(np.sum(pi[mask] * Cf[mask]))
    q = pi.sum(axis=0)
    coupling = Coupling(pi, mu, q)
    dual = min(p.g for p in probes)
    tight = best.rho > 0.0
    return BudgetedLpSolution(value, coupling, q, float(best.rho), tight, dual, used)


def _lp_inputs(loss: LossSpec, dist: DiscreteDistribution, grid: Sequence[Point]) -> tuple[np.ndarray, np.ndarray]:
    ell = np.array([eval_loss(loss, z) for z in grid])
    C = cost_matrix(loss.cost, dist.atoms, grid, loss.r)
    return ell, C


def sup_over_grid(
    loss: LossSpec,
    dist: DiscreteDistribution,
    delta: float,
    grid: Sequence[Point],
    trace: Trace | None = None,
) -> BudgetedLpSolution:
    """Worst-case expected loss over distributions supported on ``grid``.

    Maximises ``E_P[ell]`` over ``P`` on the grid with
    ``W_{d,r}(P, dist) <= delta``; exact up to floating point.

    Raises
    ------
    NoFiniteCostColumn
    """
    if not grid:
        raise NoFiniteCostColumn("empty grid")
    ell, C = _lp_inputs(loss, dist, grid)
    return solve_budgeted_lp(dist.weights, ell, C, float(delta) ** loss.r, trace)


def dual_bound_I(loss: LossSpec, dist: DiscreteDistribution, delta: float, grid: Sequence[Point]) -> float:
    """``min_rho g(rho)`` with the inner supremum restricted to ``grid``."""
    return sup_over_grid(loss, dist, delta, grid).dual_value


def dual_objective(loss: LossSpec, dist: DiscreteDistribution, delta: float, grid: Sequence[Point],
                   rho: float) -> float:
    """``g(rho)`` on the grid; an upper bound on the grid supremum for every ``rho >= 0``."""
    ell, C = _lp_inputs(loss, dist, grid)
    finite = np.isfinite(C)
    Cf = np.where(finite, C, 0.0)
    return _row_stats(rho, dist.weights, ell, C, finite, Cf, float(delta) ** loss.r).g


# ---------------------------------------------------------------------------
# grids


def _segment(anchor: Point, end: Point, resolution: int) -> list[Point]:
    pts = []
    for k in range(1, resolution):
        t = k / resolution
        x = anchor.x + t * (end.x - anchor.x)
        if anchor.variant == LABELED and anchor.y != end.y:
            pts.append(Point.labeled(x, anchor.y + t * (end.y - anchor.y)))
        else:
            pts.append(anchor.with_x(x))
    return pts


def _fallback_points(loss: LossSpec, anchor: Point) -> list[Point]:
    if loss.family == BINARY_CROSS_ENTROPY:
        out = []
        for e in _BCE_EDGE_PROBES:
            out += [Point.plain([e]), Point.plain([1.0 - e])]
        return out
    sat = saturation_point(loss, anchor)
    return [] if sat is None else [sat]


def make_grid(
    dist: DiscreteDistribution,
    loss: LossSpec,
    delta: float,
    resolution: int,
    epsilon_levels: Sequence[float] = GRID_EPSILON_LEVELS,
) -> list[Point]:
    """Grid of atoms, witnesses and the segments joining them.

    Witnesses are drawn at ``epsilon = L * level`` for each level, in mode A2
    and (for ``r > 1`` with nonzero empirical loss) in mode B.  Witnesses keep
    the atom's label, so indicator costs stay finite.  For the per-point
    families a missing witness is replaced by the loss's saturation probes.

    Raises
    ------
    WitnessNotFound
        Propagated for families outside the per-point catalog.
    """
    if resolution < 1:
        raise ValueError("resolution must be at least 1")
    grid: dict[Point, None] = {z: None for z in dist.atoms}
    E = expectation(dist, lambda z: eval_loss(loss, z))
    use_b = loss.r > 1.0 and E > 0.0
    for atom in dist.atoms:
        L = anchor_constant(loss, atom)
        ends: list[Point] = []
        if L > 0.0:
            for level in epsilon_levels:
                try:
                    ends.append(witness(loss, atom, L * level, delta))
                    if use_b:
                        target = eval_psi(loss, atom) * delta / E ** (1.0 / loss.r)
                        ends.append(witness(loss, atom, L * level, delta, mode="B", target=target))
                except WitnessNotFound:
                    if loss.family not in PER_POINT:
                        raise
                    ends.extend(_fallback_points(loss, atom))
                    break
        for end in dict.fromkeys(ends):
            grid.setdefault(end, None)
            for p in _segment(atom, end, resolution):
                grid.setdefault(p, None)
    return list(grid)


def grid_to_csv(grid: Sequence[Point]) -> str:
    """One row per grid point: stacked coordinates."""
    return "".join(",".join(format(v, ".17g") for v in z.stacked()) + "\n" for z in grid)


def json_lines_trace(stream) -> Trace:
    """Trace callback writing one JSON object per line to ``stream``."""

    def emit(record: dict) -> None:
        stream.write(json.dumps(record) + "\n")

    return emit
