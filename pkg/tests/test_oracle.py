import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import labeled_data, linprog_budgeted, linprog_transport
from wassreg.costs import CostSpec, GroundNorm, cost_matrix
from wassreg.equivalence import empirical_loss
from wassreg.errors import InfeasibleTransport, NoFiniteCostColumn
from wassreg.losses import LossSpec
from wassreg.oracle import (
    dual_bound_I,
    dual_objective,
    grid_to_csv,
    json_lines_trace,
    make_grid,
    solve_budgeted_lp,
    sup_over_grid,
    transport_simplex,
    wasserstein_coupling,
    wasserstein_discrete,
)
from wassreg.space import Point, make_distribution, point_mass

ABS = LossSpec("AbsLinear", [0.0], CostSpec.full_norm())


def y_point(y):
    return Point.labeled([0.0], y)


def random_budgeted(seed):
    rng = np.random.default_rng(seed)
    N, M = int(rng.integers(1, 9)), int(rng.integers(2, 201))
    mu = rng.dirichlet(np.ones(N))
    ell = rng.normal(size=M) * rng.choice([1.0, 10.0])
    C = rng.exponential(size=(N, M))
    C[rng.uniform(size=(N, M)) < 0.2] = np.inf
    zero_cols = rng.integers(0, M, size=N)
    C[np.arange(N), zero_cols] = 0.0
    budget = float(rng.exponential() * rng.choice([0.01, 0.3, 3.0]))
    return mu, ell, C, budget


def test_wasserstein_identity():
    d = labeled_data(1, 4, 2)
    assert wasserstein_discrete(CostSpec.full_norm(), 1.0, d, d) == 0.0


def test_wasserstein_to_singleton():
    d = labeled_data(2, 5, 2)
    z = Point.labeled([0.1, 0.2], 0.3)
    c = CostSpec.full_norm(GroundNorm("L1"))
    for r in (1.0, 2.0):
        want = sum(w * c.norm(a.stacked() - z.stacked()) ** r for a, w in zip(d.atoms, d.weights)) ** (1 / r)
        assert wasserstein_discrete(c, r, d, point_mass(z)) == pytest.approx(want, rel=1e-14)


def test_wasserstein_two_atoms_parametric_sweep():
    c = CostSpec.full_norm()
    P = make_distribution([y_point(0.0), y_point(1.0)], [0.3, 0.7])
    Q = make_distribution([y_point(0.5), y_point(2.0)], [0.6, 0.4])
    C = cost_matrix(c, Q.atoms, P.atoms).T
    ts = np.linspace(max(0.0, 0.3 - 0.4), min(0.3, 0.6), 300001)
    vals = ts * C[0, 0] + (0.3 - ts) * C[0, 1] + (0.6 - ts) * C[1, 0] + (0.4 - 0.3 + ts) * C[1, 1]
    assert wasserstein_discrete(c, 1.0, P, Q) == pytest.approx(vals.min(), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_transport_matches_linprog(seed):
    rng = np.random.default_rng(seed)
    N, M = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    a, b = rng.dirichlet(np.ones(N)), rng.dirichlet(np.ones(M))
    C = rng.exponential(size=(N, M))
    if N > 1 and M > 1:
        C[0, 0] = np.inf
    want = linprog_transport(a, b, C)
    if want is None:
        with pytest.raises(InfeasibleTransport):
            transport_simplex(a, b, C)
        return
    flow = transport_simplex(a, b, C)
    np.testing.assert_allclose(flow.sum(axis=1), a, atol=1e-12)
    np.testing.assert_allclose(flow.sum(axis=0), b, atol=1e-12)
    mask = flow > 0
    assert float(np.sum(flow[mask] * C[mask])) == pytest.approx(want, abs=1e-9)


def test_transport_infeasible():
    with pytest.raises(InfeasibleTransport):
        transport_simplex(np.array([1.0]), np.array([1.0]), np.array([[np.inf]]))


def test_coupling_returned_is_valid():
    P, Q = labeled_data(3, 4, 2), labeled_data(4, 6, 2)
    w, cpl = wasserstein_coupling(CostSpec.full_norm(), 2.0, P, Q)
    assert cpl.matrix.shape == (4, 6)
    assert w > 0
    assert len(cpl.to_csv().splitlines()) == 4


def test_grid_of_atoms_gives_empirical_loss():
    d = labeled_data(5, 4, 2)
    loss = LossSpec("AbsLinear", [0.3, -1.0], CostSpec.feature_norm_label_indicator())
    for delta in (0.0, 0.5, 10.0):
        assert sup_over_grid(loss, d, delta, list(d.atoms)).value == pytest.approx(empirical_loss(loss, d), abs=1e-15)


def test_half_split_example():
    d = point_mass(y_point(0.0))
    sol = sup_over_grid(ABS, d, 1.0, [y_point(0.0), y_point(2.0)])
    assert sol.value == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(sol.coupling.matrix, [[0.5, 0.5]], atol=1e-15)
    assert sol.tight


def test_large_radius_gives_max_loss():
    d = labeled_data(6, 3, 1)
    grid = list(d.atoms) + [y_point(v).with_x(d.atoms[0].x) for v in (-3.0, 4.0)]
    sol = sup_over_grid(ABS, d, 1e6, grid)
    assert sol.value == pytest.approx(4.0, abs=1e-12)
    assert sol.dual_value == pytest.approx(4.0, abs=1e-12)
    assert sol.rho_star == 0.0 and not sol.tight


def test_no_finite_column():
    d = make_distribution([Point.binary([0.0], 1)], [1.0])
    loss = LossSpec("HingePow", [1.0], CostSpec.feature_norm_label_indicator())
    with pytest.raises(NoFiniteCostColumn):
        sup_over_grid(loss, d, 1.0, [Point.binary([0.0], -1)])


@pytest.mark.parametrize("seed", range(50))
def test_budgeted_lp_matches_linprog_and_dual(seed):
    mu, ell, C, budget = random_budgeted(seed)
    sol = solve_budgeted_lp(mu, ell, C, budget)
    assert sol.value == pytest.approx(linprog_budgeted(mu, ell, C, budget), abs=1e-9 * (1 + abs(sol.value)))
    assert abs(sol.dual_value - sol.value) <= 1e-9 * (1 + abs(sol.value))
    pi = sol.coupling.matrix
    np.testing.assert_allclose(pi.sum(axis=1), mu, atol=1e-9)
    assert np.all(pi[~np.isfinite(C)] == 0.0)
    assert sol.budget_used <= budget + 1e-9 * (1 + budget)
    if sol.tight:
        assert sol.budget_used == pytest.approx(budget, rel=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_weak_duality_at_probed_multipliers(seed):
    d = labeled_data(seed, 4, 2)
    loss = LossSpec("TauInsensitive", [1.0, -0.5], CostSpec.full_norm(), tau=0.2)
    grid = make_grid(d, loss, 0.3, 4)
    v = sup_over_grid(loss, d, 0.3, grid).value
    for rho in np.linspace(0, 5, 21):
        assert v <= dual_objective(loss, d, 0.3, grid, rho) + 1e-12
    assert dual_bound_I(loss, d, 0.3, grid) == pytest.approx(v, abs=1e-9)


def test_trace_writes_json_lines():
    buf = io.StringIO()
    sol = solve_budgeted_lp(np.array([1.0]), np.array([0.0, 2.0]), np.array([[0.0, 2.0]]), 1.0,
                            trace=json_lines_trace(buf))
    recs = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert recs and {"rho", "g", "subgrad_right", "subgrad_left"} <= set(recs[0])
    assert sol.value == pytest.approx(1.0)


def test_make_grid_basic_properties():
    d = labeled_data(7, 3, 2)
    loss = LossSpec("AbsLinear", [0.5, 1.0], CostSpec.feature_norm_label_indicator())
    g1 = make_grid(d, loss, 0.5, 1)
    g4 = make_grid(d, loss, 0.5, 4)
    assert set(d.atoms) <= set(g1) <= set(g4)
    labels = {a.y for a in d.atoms}
    assert all(z.y in labels for z in g4)
    assert len(grid_to_csv(g1).splitlines()) == len(g1)
    with pytest.raises(ValueError):
        make_grid(d, loss, 0.5, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 20))
def test_adding_points_never_decreases(seed, extra):
    rng = np.random.default_rng(seed)
    d = labeled_data(seed % 97, 3, 1)
    loss = LossSpec("AbsLinear", [0.7], CostSpec.full_norm())
    base = list(d.atoms) + [Point.labeled(rng.normal(size=1), rng.normal()) for _ in range(5)]
    more = base + [Point.labeled(rng.normal(size=1), rng.normal()) for _ in range(extra)]
    assert sup_over_grid(loss, d, 0.4, more).value >= sup_over_grid(loss, d, 0.4, base).value - 1e-12


def test_infinite_costs_never_carry_mass():
    d = make_distribution([Point.binary([0.0], 1), Point.binary([1.0], -1)], [0.5, 0.5])
    loss = LossSpec("HingePow", [1.0], CostSpec.feature_norm_label_indicator())
    grid = make_grid(d, loss, 0.5, 3)
    sol = sup_over_grid(loss, d, 0.5, grid)
    C = cost_matrix(loss.cost, d.atoms, grid)
    assert np.all(sol.coupling.matrix[~np.isfinite(C)] == 0.0)
    assert not math.isinf(sol.value)
