import numpy as np
import pytest

from conftest import labeled_data
from wassreg.costs import CostSpec, GroundNorm
from wassreg.errors import DivergenceDetected, NonConvexFamily
from wassreg.solver import (
    SolveConfig,
    SolveResult,
    finite_difference_check,
    minimize_regularized,
    objective,
)
from wassreg.space import Point, make_distribution

FEAT = CostSpec.feature_norm_label_indicator(GroundNorm("L2"))
X = np.array([[1.0, 2.0], [2.0, 1.0], [2.0, 2.5], [-1.0, -1.5], [-2.0, -1.0], [-1.5, -2.5]])
Y = [1, 1, 1, -1, -1, -1]
# Minimum of mean hinge + 0.1 |beta|_2 over the grid {-3, -2.99, ..., 3}^2.
SVM_GRID_MIN = 0.0554707130


def svm_data():
    return make_distribution([Point.binary(x, y) for x, y in zip(X, Y)], np.full(6, 1 / 6))


def interp_data():
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(8, 3))
    b = np.array([1.0, -2.0, 0.5])
    return make_distribution([Point.labeled(x, x @ b) for x in xs], np.full(8, 1 / 8)), b


def test_svm_grid_oracle_frozen():
    g = np.round(np.arange(-300, 301) * 0.01, 10)
    b1, b2 = np.meshgrid(g, g, indexing="ij")
    m = np.stack([y * (b1 * x[0] + b2 * x[1]) for x, y in zip(X, Y)])
    F = np.maximum(1 - m, 0).mean(0) + 0.1 * np.hypot(b1, b2)
    assert F.min() == pytest.approx(SVM_GRID_MIN, abs=1e-9)


def test_svm_matches_grid():
    cfg = SolveConfig("HingePow", FEAT, 0.1, eta0=1.0, max_iter=20000, stall=5000)
    res = minimize_regularized(cfg, svm_data(), [0.0, 0.0])
    assert res.objective <= SVM_GRID_MIN + 1e-4
    assert res.objective == pytest.approx(objective(cfg, svm_data(), res.beta), abs=0)


def test_polyak_interpolation():
    d, b = interp_data()
    cfg = SolveConfig("AbsLinear", CostSpec.full_norm(), 0.0, r=2, step_rule="polyak", target=0.0, max_iter=5000, stall=5000)
    res = minimize_regularized(cfg, d, [0.0, 0.0, 0.0])
    assert res.objective <= 1e-8
    assert np.allclose(res.beta, b, atol=1e-6)


@pytest.mark.parametrize(
    "family,cost,params",
    [
        ("LogCosh", CostSpec.full_norm(), {}),
        ("RidgeSquare", CostSpec.product_cost(), {}),
        ("TauInsensitive", CostSpec.full_norm(), {"tau": 0.05}),
        ("Quantile", CostSpec.full_norm(), {"gamma": 0.3}),
        ("CvarAbsResidual", CostSpec.full_norm(), {"alpha": 0.4}),
    ],
)
def test_finite_differences(family, cost, params):
    d, _ = interp_data()
    cfg = SolveConfig(family, cost, 0.2, params=params)
    assert finite_difference_check(cfg, d, [0.3, -0.2, 0.1]) <= 1e-6


def test_finite_differences_near_huber_kink():
    d, b = interp_data()
    x0 = d.atoms[0].x
    beta = b - (1 + 1e-3) * x0 / (x0 @ x0)
    cfg = SolveConfig("Huber", CostSpec.full_norm(), 0.2)
    assert finite_difference_check(cfg, d, beta) <= 1e-5


def test_root_form_r2_finite_differences():
    d = labeled_data(7, 6, 2)
    cfg = SolveConfig("AbsLinear", CostSpec.full_norm(), 0.3, r=2)
    assert finite_difference_check(cfg, d, [0.4, 0.7]) <= 1e-6


def test_best_iterate_never_worse():
    d = labeled_data(2, 10, 3)
    cfg = SolveConfig("Huber", CostSpec.full_norm(), 0.1, max_iter=300)
    b0 = [1.0, 1.0, -1.0]
    res = minimize_regularized(cfg, d, b0)
    assert res.objective <= objective(cfg, d, b0)


def test_stall_at_optimum():
    d = labeled_data(2, 10, 3)
    cfg = SolveConfig("AbsLinear", CostSpec.full_norm(), 0.1, max_iter=20000, stall=200)
    res = minimize_regularized(cfg, d, [0.0, 0.0, 0.0])
    again = minimize_regularized(cfg, d, res.beta)
    assert again.iterations <= 200 + 1
    assert again.objective == pytest.approx(res.objective, abs=1e-9)


@pytest.mark.parametrize("delta", [0.0, 0.3, 1.0])
def test_one_dimensional_grid(delta):
    rng = np.random.default_rng(int(delta * 10))
    xs = rng.normal(size=7)
    ys = 0.8 * xs + 0.3 * rng.normal(size=7)
    d = make_distribution([Point.labeled([x], y) for x, y in zip(xs, ys)], np.full(7, 1 / 7))
    grid = np.linspace(-3, 3, 600001)
    F = np.abs(ys[:, None] - grid[None, :] * xs[:, None]).mean(0) + delta * np.sqrt(grid**2 + 1)
    cfg = SolveConfig("AbsLinear", CostSpec.full_norm(), delta, max_iter=20000, stall=5000)
    res = minimize_regularized(cfg, d, [0.0])
    assert res.objective == pytest.approx(F.min(), abs=1e-5)


def test_nonconvex_rejected():
    with pytest.raises(NonConvexFamily):
        SolveConfig("BinaryCrossEntropy", CostSpec.absolute_scalar(), 0.1)
    with pytest.raises(NonConvexFamily):
        SolveConfig("TruncPinball", CostSpec.full_norm(), 0.1)


def test_divergence_detected():
    d = labeled_data(2, 5, 2)
    cfg = SolveConfig("AbsLinear", CostSpec.full_norm(), 0.1, eta0=1e8)
    with pytest.raises(DivergenceDetected):
        minimize_regularized(cfg, d, [0.0, 0.0])


def test_trajectory_and_json_round_trip():
    d = labeled_data(2, 5, 2)
    cfg = SolveConfig("LogCosh", CostSpec.full_norm(), 0.1, max_iter=50, record_trajectory=True)
    assert SolveConfig.from_json(cfg.to_json()) == cfg
    res = minimize_regularized(cfg, d, [0.0, 0.0])
    assert len(res.trajectory) == res.iterations + 1
    assert min(res.trajectory) == res.objective
    assert SolveResult.from_json(res.to_json()) == res


@pytest.mark.parametrize("r", [1.0, 2.0, 3.0])
def test_hmcr_finite_differences(r):
    rng = np.random.default_rng(3)
    d = make_distribution([Point.plain(x) for x in rng.normal(size=(8, 3))], np.full(8, 1 / 8))
    cfg = SolveConfig("Hmcr", CostSpec.plain_norm(), 0.2, r=r, params={"alpha": 0.4})
    assert finite_difference_check(cfg, d, [0.3, -0.2, 0.1]) <= 1e-6
