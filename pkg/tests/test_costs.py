import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wassreg.costs import CostSpec, GroundNorm, cost_matrix, dual_achiever, dual_norm, eval_cost, norm_value
from wassreg.errors import DimensionMismatch, VariantMismatch, ZeroVector
from wassreg.losses import trapezoid_weights
from wassreg.space import Point

NORMS = [GroundNorm("L1"), GroundNorm("L2"), GroundNorm("Linf"), GroundNorm("WeightedL2", [1.0, 2.0, 0.5])]


def test_label_indicator_is_infinite():
    c = CostSpec.feature_norm_label_indicator(GroundNorm("L2"))
    x = [1.0, 2.0]
    assert eval_cost(c, Point.binary(x, 1), Point.binary(x, -1)) == math.inf


def test_product_cost_vanishes_on_diagonal():
    z = Point.labeled([1.0, -2.0], 0.5)
    assert eval_cost(CostSpec.product_cost(), z, z) == 0.0


def test_product_cost_value():
    a, b = Point.plain([1.0, 0.0]), Point.plain([0.0, 1.0])
    assert eval_cost(CostSpec.product_cost(), a, b) == pytest.approx(2.0, abs=1e-15)


def test_semi_norm_b_examples():
    c = CostSpec.semi_norm_b([[1.0, 0.0]])
    base = Point.labeled([0.0, 0.0], 1.0)
    assert eval_cost(c, Point.labeled([2.0, 0.0], 1.0), base) == pytest.approx(2.0, abs=1e-14)
    assert eval_cost(c, Point.labeled([0.0, 1.0], 1.0), base) == math.inf


def _grid_min_norm(B, v, levels=12, n=41):
    """Zooming grid search for the point with ``B^T u = v`` (unique when B has full row rank)."""
    center, half = np.zeros(B.shape[0]), 10.0
    for _ in range(levels):
        axes = [np.linspace(c - half, c + half, n) for c in center]
        U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, B.shape[0])
        resid = np.linalg.norm(U @ B - v, axis=1)
        center = U[np.argmin(resid)]
        half *= 0.25
    return float(np.linalg.norm(center))


def test_semi_norm_b_matches_constrained_minimization(rng):
    for _ in range(20):
        B = rng.normal(size=(2, 3))
        v = B.T @ rng.normal(size=2)
        c = CostSpec.semi_norm_b(B)
        got = eval_cost(c, Point.labeled(v, 0.0), Point.labeled(np.zeros(3), 0.0))
        assert got == pytest.approx(_grid_min_norm(B, v), abs=1e-6)


def test_semi_norm_b_outside_range_is_infinite(rng):
    B = rng.normal(size=(2, 3))
    n = np.cross(B[0], B[1])
    c = CostSpec.semi_norm_b(B)
    assert eval_cost(c, Point.labeled(n, 0.0), Point.labeled(np.zeros(3), 0.0)) == math.inf


def test_subset_norm():
    c = CostSpec.subset_norm([0, 2], GroundNorm("L1"))
    a = Point.labeled([0.0, 0.0, 0.0], 1.0)
    assert eval_cost(c, Point.labeled([1.0, 0.0, -2.0], 1.0), a) == 3.0
    assert eval_cost(c, Point.labeled([1.0, 0.5, -2.0], 1.0), a) == math.inf
    with pytest.raises(DimensionMismatch):
        eval_cost(CostSpec.subset_norm([5]), a, a)


def test_full_norm_uses_label():
    c = CostSpec.full_norm(GroundNorm("L1"))
    assert eval_cost(c, Point.labeled([1.0], 2.0), Point.labeled([0.0], 0.0)) == 3.0


def test_l2_function_cost():
    q = trapezoid_weights(3)
    a, b = Point.sampled([0.0, 0.0, 0.0], q, y=1.0), Point.sampled([1.0, 1.0, 1.0], q, y=1.0)
    assert eval_cost(CostSpec.l2_function_label_indicator(), a, b) == pytest.approx(1.0, abs=1e-15)
    c = Point.sampled([1.0, 1.0, 1.0], q, y=0.0)
    assert eval_cost(CostSpec.l2_function_label_indicator(), a, c) == math.inf


def test_variant_mismatch():
    with pytest.raises(VariantMismatch):
        eval_cost(CostSpec.plain_norm(), Point.labeled([1.0], 0.0), Point.labeled([1.0], 0.0))


def test_dual_norm_examples():
    assert dual_norm(GroundNorm("L1"), [1.0, -2.0]) == 2.0
    assert dual_norm(GroundNorm("L2"), [3.0, 4.0]) == 5.0
    assert dual_norm(GroundNorm("Linf"), [1.0, -2.0]) == 3.0
    assert dual_norm(GroundNorm("L2"), [0.0, 0.0]) == 0.0
    with pytest.raises(DimensionMismatch):
        dual_norm(GroundNorm("WeightedL2", [1.0, 2.0]), [1.0, 2.0, 3.0])


def test_dual_achiever_examples():
    np.testing.assert_allclose(dual_achiever(GroundNorm("L2"), [3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(dual_achiever(GroundNorm("Linf"), [1.0, -2.0]), [1.0, -1.0])
    np.testing.assert_array_equal(dual_achiever(GroundNorm("L1"), [1.0, -2.0]), [0.0, -1.0])
    np.testing.assert_array_equal(dual_achiever(GroundNorm("L1"), [2.0, -2.0]), [1.0, 0.0])
    with pytest.raises(ZeroVector):
        dual_achiever(GroundNorm("L2"), [0.0, 0.0])


def test_json_round_trip():
    specs = [
        CostSpec.full_norm(GroundNorm("WeightedL2", [1.0, 2.0])),
        CostSpec.feature_norm_label_indicator(GroundNorm("L1")),
        CostSpec.subset_norm([2, 0], GroundNorm("Linf")),
        CostSpec.semi_norm_b([[1.0, 2.0], [0.0, 1.0]]),
        CostSpec.product_cost(),
        CostSpec.l2_function_label_indicator(),
        CostSpec.plain_norm(),
        CostSpec.absolute_scalar(),
    ]
    for s in specs:
        assert CostSpec.from_json(s.to_json()) == s
        assert "variant" in s.to_json()


def test_cost_matrix_power():
    rows = [Point.plain([0.0])]
    cols = [Point.plain([2.0]), Point.plain([-3.0])]
    np.testing.assert_array_equal(cost_matrix(CostSpec.absolute_scalar(), rows, cols, 2.0), [[4.0, 9.0]])


vec3 = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


@settings(max_examples=100, deadline=None)
@given(vec3, vec3, st.sampled_from(range(len(NORMS))))
def test_holder_inequality_and_achiever(v, w, k):
    norm = NORMS[k]
    assert v @ w <= dual_norm(norm, v) * norm_value(norm, w) + 1e-12 * (1 + abs(v) @ abs(w))
    if np.any(v):
        a = dual_achiever(norm, v)
        assert norm_value(norm, a) == pytest.approx(1.0, abs=1e-12)
        assert v @ a == pytest.approx(dual_norm(norm, v), abs=1e-12 * (1 + dual_norm(norm, v)))


@settings(max_examples=60, deadline=None)
@given(vec3, st.floats(-3, 3))
def test_cost_is_zero_on_diagonal(v, y):
    lab = Point.labeled(v, y)
    for c in (
        CostSpec.full_norm(), CostSpec.feature_norm_label_indicator(), CostSpec.subset_norm([1]),
        CostSpec.semi_norm_b(np.eye(3)), CostSpec.product_cost(),
    ):
        assert eval_cost(c, lab, lab) == 0.0
    assert eval_cost(CostSpec.plain_norm(), Point.plain(v), Point.plain(v)) == 0.0


@settings(max_examples=60, deadline=None)
@given(vec3, vec3, st.floats(-5, 5), st.sampled_from(range(len(NORMS))))
def test_norm_costs_absolutely_homogeneous(z, u, t, k):
    norm = NORMS[k]
    for c in (
        CostSpec.full_norm(GroundNorm(norm.kind, norm.weights if norm.weights is None else [1.0, 2.0, 0.5, 3.0])),
        CostSpec.feature_norm_label_indicator(norm),
        CostSpec.semi_norm_b(np.array([[1.0, 0.0, 2.0], [0.0, 1.0, -1.0], [1.0, 1.0, 0.0]])),
    ):
        base = Point.labeled(z, 0.5)
        stack = c.variant == "FullNorm"
        one = Point.labeled(z + u, 0.5 + (1.0 if stack else 0.0))
        scaled = Point.labeled(z + t * u, 0.5 + (t if stack else 0.0))
        lhs = eval_cost(c, scaled, base)
        rhs = abs(t) * eval_cost(c, one, base)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("scale", [1e-280, 1.0, 1e200])
def test_achiever_at_extreme_scales(scale):
    v = scale * np.array([0.0, -2.0, 1.0])
    for norm in (GroundNorm("L2"), GroundNorm("WeightedL2", [1.0, 2.0, 3.0])):
        a = dual_achiever(norm, v)
        assert norm_value(norm, a) == pytest.approx(1.0, abs=1e-12)
        assert v @ a == pytest.approx(dual_norm(norm, v), rel=1e-12)
