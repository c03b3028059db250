"""Loss families ``psi_beta``, weak-Lipschitz constants and witness points.

A :class:`LossSpec` bundles a family, its parameter vector ``beta``, the
exponent ``r`` (the loss is ``ell = psi ** r``) and the cost it is paired
with.  Most families are ``h(phi(z))`` for a scalar map ``phi`` that is linear
in the movable block of ``z``; moving ``z`` along a dual-achiever direction by
cost ``s`` changes ``phi`` by exactly ``s * L_phi``.  Witness construction is
built on that ray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .costs import (
    ABSOLUTE_SCALAR,
    FEATURE_NORM_LABEL_INDICATOR,
    FULL_NORM,
    L2_FUNCTION_LABEL_INDICATOR,
    PLAIN_NORM,
    PRODUCT_COST,
    SEMI_NORM_B,
    SUBSET_NORM,
    CostSpec,
    dual_achiever,
    dual_norm,
    eval_cost,
)
from .errors import (
    AlphaOutOfRange,
    DimensionMismatch,
    DomainError,
    EpsilonOutOfRange,
    NoFiniteCostProbe,
    UnsupportedExponent,
    UnsupportedPairing,
    VariantMismatch,
    WitnessNotFound,
)
from .space import BINARY, LABELED, PLAIN, SAMPLED, Point

ABS_LINEAR = "AbsLinear"
LOWER_PARTIAL = "LowerPartial"
TAU_INSENSITIVE = "TauInsensitive"
LOG_COSH = "LogCosh"
HUBER = "Huber"
QUANTILE = "Quantile"
HINGE_POW = "HingePow"
SVM_ABS_POW = "SvmAbsPow"
LOG_EXP = "LogExp"
SMOOTH_HINGE = "SmoothHinge"
TRUNC_PINBALL = "TruncPinball"
BINARY_CROSS_ENTROPY = "BinaryCrossEntropy"
HARD_SIGMOID = "HardSigmoid"
RIDGE_SQUARE = "RidgeSquare"
FUNCTIONAL_LINEAR = "FunctionalLinear"
CVAR_ABS_RESIDUAL = "CvarAbsResidual"
CVAR_MARGIN = "CvarMargin"
HMCR = "Hmcr"

FAMILIES = (
    ABS_LINEAR,
    LOWER_PARTIAL,
    TAU_INSENSITIVE,
    LOG_COSH,
    HUBER,
    QUANTILE,
    HINGE_POW,
    SVM_ABS_POW,
    LOG_EXP,
    SMOOTH_HINGE,
    TRUNC_PINBALL,
    BINARY_CROSS_ENTROPY,
    HARD_SIGMOID,
    RIDGE_SQUARE,
    FUNCTIONAL_LINEAR,
    CVAR_ABS_RESIDUAL,
    CVAR_MARGIN,
    HMCR,
)

# phi = y - <beta, x>
_REGRESSION = {ABS_LINEAR, LOWER_PARTIAL, TAU_INSENSITIVE, LOG_COSH, HUBER, QUANTILE, CVAR_ABS_RESIDUAL}
# phi = y <beta, x>
_MARGIN = {HINGE_POW, SVM_ABS_POW, LOG_EXP, SMOOTH_HINGE, TRUNC_PINBALL, CVAR_MARGIN}
# phi = <beta, z>
_INNER = {HARD_SIGMOID, HMCR}

# families with a piecewise-linear outer function (exact-slope witnesses)
PIECEWISE_LINEAR = {
    ABS_LINEAR,
    LOWER_PARTIAL,
    TAU_INSENSITIVE,
    HINGE_POW,
    SVM_ABS_POW,
    FUNCTIONAL_LINEAR,
    CVAR_ABS_RESIDUAL,
    CVAR_MARGIN,
    HMCR,
}
# families whose equivalence is cataloged for every r >= 1
R_ANY = {ABS_LINEAR, LOWER_PARTIAL, TAU_INSENSITIVE, HINGE_POW, SVM_ABS_POW, FUNCTIONAL_LINEAR, HMCR}
PER_POINT = {BINARY_CROSS_ENTROPY, HARD_SIGMOID}
RISK_FAMILIES = {CVAR_ABS_RESIDUAL, CVAR_MARGIN, HMCR}

FUNCTIONAL_SHAPES = ("abs", "lpm", "insens")
DEFAULT_GRID_NODES = 129

# (family, cost variant, r-range, constant, note)
CATALOG: tuple[tuple[str, str, str, str, str], ...] = (
    *[(f, c, "r >= 1", lf, "") for f in (ABS_LINEAR, LOWER_PARTIAL, TAU_INSENSITIVE) for c, lf in (
        (FULL_NORM, "||[-beta; 1]||_*"),
        (FEATURE_NORM_LABEL_INDICATOR, "||beta||_*"),
        (SUBSET_NORM, "||beta_I||_*"),
        (SEMI_NORM_B, "||B beta||_2"),
    )],
    *[(f, c, "r = 1", lf, "L_h = 1") for f in (LOG_COSH, HUBER, QUANTILE) for c, lf in (
        (FULL_NORM, "||[-beta; 1]||_*"),
        (FEATURE_NORM_LABEL_INDICATOR, "||beta||_*"),
    )],
    (HINGE_POW, FEATURE_NORM_LABEL_INDICATOR, "r >= 1", "||beta||_*", ""),
    (SVM_ABS_POW, FEATURE_NORM_LABEL_INDICATOR, "r >= 1", "||beta||_*", ""),
    (LOG_EXP, FEATURE_NORM_LABEL_INDICATOR, "r = 1", "||beta||_*", "L_h = 1"),
    (SMOOTH_HINGE, FEATURE_NORM_LABEL_INDICATOR, "r = 1", "||beta||_*", "L_h = 1"),
    (TRUNC_PINBALL, FEATURE_NORM_LABEL_INDICATOR, "r = 1", "||beta||_*", "L_h = 1"),
    (BINARY_CROSS_ENTROPY, ABSOLUTE_SCALAR, "r = 1",
     "-beta log(beta z) - (1/z - beta) log(1 - beta z) per anchor", "conditional regime, per-point"),
    (HARD_SIGMOID, PLAIN_NORM, "r = 1", "||beta||_*/2 for |<beta,z>| <= 1, ||beta||_*/(1+|<beta,z>|) otherwise",
     "conditional regime, per-point"),
    (RIDGE_SQUARE, PRODUCT_COST, "r = 1", "||beta||_2^2 + 1", ""),
    (FUNCTIONAL_LINEAR, L2_FUNCTION_LABEL_INDICATOR, "r >= 1", "quadrature L2 norm of the weight function", ""),
    (CVAR_ABS_RESIDUAL, FULL_NORM, "CVaR", "||[-beta; 1]||_*", "robust CVaR adds L delta/(1-alpha)"),
    (CVAR_MARGIN, FEATURE_NORM_LABEL_INDICATOR, "CVaR", "||beta||_*", "robust CVaR adds L delta/(1-alpha)"),
    (HMCR, PLAIN_NORM, "order r >= 1", "||beta||_*", "robust HMCR adds L delta/(1-alpha)"),
)
_SUPPORTED = {(f, c) for f, c, *_ in CATALOG}


def trapezoid_weights(nodes: int) -> np.ndarray:
    """Composite-trapezoid weights for ``nodes`` uniform points on [0, 1]."""
    if nodes < 2:
        raise ValueError("trapezoid quadrature needs at least two nodes")
    w = np.full(nodes, 1.0 / (nodes - 1))
    w[0] = w[-1] = 0.5 / (nodes - 1)
    return w / w.sum()


def monomial_basis(degree: int, nodes: int = DEFAULT_GRID_NODES) -> np.ndarray:
    """Rows ``t ** j`` for ``j = 0..degree`` sampled on the uniform grid."""
    t = np.linspace(0.0, 1.0, nodes)
    return np.vstack([t**j for j in range(degree + 1)])


def _opt_float(v: Any) -> float | None:
    return None if v is None else float(v)


@dataclass(frozen=True, eq=False)
class LossSpec:
    """A loss family instance paired with a cost.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    beta : array_like
        Parameter vector.  For ``BinaryCrossEntropy`` a single value in (0, 1);
        for ``FunctionalLinear`` either the weight function on the grid or the
        coefficients of ``basis``.
    cost : CostSpec
        The cost the loss is paired with.
    r : float
        Exponent; the loss is ``psi ** r``.  For ``Hmcr`` it is the moment order.
    tau, gamma, tau1, tau2, alpha : float, optional
        Family parameters.  ``tau`` defaults to 0 for ``AbsLinear`` and to 1 for
        the hinge pair.
    shape : str
        ``FunctionalLinear`` outer shape: ``abs``, ``lpm`` or ``insens``.
    basis : array_like, optional
        ``FunctionalLinear`` basis functions, one row per function.
    grid_nodes : int, optional
        ``FunctionalLinear`` quadrature grid size (default 129).
    """

    family: str
    beta: np.ndarray
    cost: CostSpec
    r: float = 1.0
    tau: float | None = None
    gamma: float | None = None
    tau1: float | None = None
    tau2: float | None = None
    alpha: float | None = None
    shape: str | None = None
    basis: np.ndarray | None = None
    grid_nodes: int | None = None

    def __post_init__(self) -> None:
        f = self.family
        if f not in FAMILIES:
            raise ValueError(f"unknown loss family {f!r}")
        if not isinstance(self.cost, CostSpec):
            raise TypeError("cost must be a CostSpec")
        beta = np.array(self.beta, dtype=float).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        r = float(self.r)
        if not (r >= 1.0 and math.isfinite(r)):
            raise UnsupportedExponent(f"r must be a finite number >= 1, got {self.r!r}")
        if r != 1.0 and f not in R_ANY:
            raise UnsupportedExponent(f"{f} is only cataloged for r = 1")
        object.__setattr__(self, "r", r)
        for name in ("tau", "gamma", "tau1", "tau2", "alpha"):
            object.__setattr__(self, name, _opt_float(getattr(self, name)))

        if f == ABS_LINEAR:
            if self.tau not in (None, 0.0):
                raise ValueError("AbsLinear has tau = 0")
            object.__setattr__(self, "tau", 0.0)
        elif f in (LOWER_PARTIAL, TAU_INSENSITIVE):
            if self.tau is None:
                raise ValueError(f"{f} needs tau")
        elif f in (HINGE_POW, SVM_ABS_POW):
            if self.tau is None:
                object.__setattr__(self, "tau", 1.0)
        elif f == QUANTILE:
            if self.gamma is None or not 0.0 < self.gamma < 1.0:
                raise ValueError("Quantile needs gamma in (0, 1)")
        elif f == TRUNC_PINBALL:
            if self.tau1 is None or not 0.0 <= self.tau1 <= 1.0:
                raise ValueError("TruncPinball needs tau1 in [0, 1]")
            if self.tau2 is None or self.tau2 < 0.0:
                raise ValueError("TruncPinball needs tau2 >= 0")
        elif f == BINARY_CROSS_ENTROPY:
            if beta.shape != (1,) or not 0.0 < beta[0] < 1.0:
                raise DomainError("BinaryCrossEntropy needs a scalar beta in (0, 1)")
        elif f == FUNCTIONAL_LINEAR:
            shape = self.shape or "abs"
            if shape not in FUNCTIONAL_SHAPES:
                raise ValueError(f"unknown functional shape {shape!r}")
            object.__setattr__(self, "shape", shape)
            if shape == "abs":
                object.__setattr__(self, "tau", 0.0)
            elif self.tau is None:
                raise ValueError(f"functional shape {shape} needs tau")
            nodes = int(self.grid_nodes or DEFAULT_GRID_NODES)
            object.__setattr__(self, "grid_nodes", nodes)
            if self.basis is not None:
                basis = np.array(self.basis, dtype=float)
                if basis.ndim != 2 or basis.shape != (beta.shape[0], nodes):
                    raise ValueError("basis must have one row per coefficient and grid_nodes columns")
                basis.setflags(write=False)
                object.__setattr__(self, "basis", basis)
            elif beta.shape[0] != nodes:
                raise ValueError("nonparametric beta must be sampled on grid_nodes points")
        if f in RISK_FAMILIES:
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise AlphaOutOfRange("risk families need alpha in (0, 1)")

    # -----------------------------------------------------------------
    def replace(self, **changes: Any) -> "LossSpec":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return LossSpec(**fields)

    @property
    def weight_function(self) -> np.ndarray:
        """FunctionalLinear weight function sampled on the grid."""
        if self.basis is None:
            return np.array(self.beta)
        return self.basis.T @ self.beta

    @property
    def quad_weights(self) -> np.ndarray:
        return trapezoid_weights(self.grid_nodes)

    def describe(self) -> str:
        return self.family

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LossSpec):
            return NotImplemented
        return self.to_json() == other.to_json()

    __hash__ = None  # type: ignore[assignment]

    def to_json(self) -> dict:
        out: dict[str, Any] = {
            "family": self.family,
            "beta": self.beta.tolist(),
            "r": self.r,
            "cost": self.cost.to_json(),
        }
        for name in ("tau", "gamma", "tau1", "tau2", "alpha", "shape", "grid_nodes"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        if self.basis is not None:
            out["basis"] = self.basis.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "LossSpec":
        return cls(
            family=obj["family"],
            beta=obj["beta"],
            cost=CostSpec.from_json(obj["cost"]),
            r=obj.get("r", 1.0),
            tau=obj.get("tau"),
            gamma=obj.get("gamma"),
            tau1=obj.get("tau1"),
            tau2=obj.get("tau2"),
            alpha=obj.get("alpha"),
            shape=obj.get("shape"),
            basis=obj.get("basis"),
            grid_nodes=obj.get("grid_nodes"),
        )


@dataclass(frozen=True)
class LipschitzCertificate:
    """Weak-Lipschitz constant with its scope.

    ``scope`` is ``global`` or ``per-point``; for per-point certificates
    ``constant`` is the maximum of ``per_point_constants``.  ``regime`` is
    ``certified`` for unconditional families and ``conditional`` when the
    equivalence depends on the radius.
    """

    constant: float
    scope: str = "global"
    per_point_constants: tuple[float, ...] | None = None
    regime: str = "certified"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.constant) and self.constant >= 0.0):
            raise ValueError("Lipschitz constant must be finite and nonnegative")
        if self.scope == "per-point" and self.per_point_constants is None:
            raise ValueError("per-point certificates list their constants")


# ---------------------------------------------------------------------------
# scalar kernels


def bce_kernel(t: Any) -> Any:
    """``h(t) = t log t + (1 - t) log(1 - t)`` on [0, 1]."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(t > 0.0, t * np.log(t), 0.0)
        b = np.where(t < 1.0, (1.0 - t) * np.log1p(-t), 0.0)
    return a + b


def _log_cosh(t: float) -> float:
    a = abs(t)
    return a + math.log1p(math.exp(-2.0 * a)) - math.log(2.0)


def _outer(spec: LossSpec, t: float) -> float:
    """Outer function ``h`` applied to the inner value ``phi``."""
    f = spec.family
    if f in (ABS_LINEAR, CVAR_ABS_RESIDUAL):
        return abs(t)
    if f == LOWER_PARTIAL:
        return max(t - spec.tau, 0.0)
    if f == TAU_INSENSITIVE:
        return max(abs(t) - spec.tau, 0.0)
    if f == LOG_COSH:
        return _log_cosh(t)
    if f == HUBER:
        return 0.5 * t * t if abs(t) <= 1.0 else abs(t) - 0.5
    if f == QUANTILE:
        return spec.gamma * t if t >= 0.0 else -t
    if f == HINGE_POW:
        return max(spec.tau - t, 0.0)
    if f == SVM_ABS_POW:
        return abs(spec.tau - t)
    if f == LOG_EXP:
        return float(np.logaddexp(0.0, -t))
    if f == SMOOTH_HINGE:
        if t >= 1.0:
            return 0.0
        if t > 0.0:
            return 0.5 * (1.0 - t) ** 2
        return 0.5 - t
    if f == TRUNC_PINBALL:
        if t <= 1.0:
            return 1.0 - t
        if t < spec.tau2 + 1.0:
            return spec.tau1 * (t - 1.0)
        return spec.tau1 * spec.tau2
    if f == CVAR_MARGIN:
        return -t
    if f == HMCR:
        return t
    if f == HARD_SIGMOID:
        return min(1.0, max(0.0, 0.5 * (t + 1.0)))
    if f == RIDGE_SQUARE:
        return t * t
    if f == FUNCTIONAL_LINEAR:
        if spec.shape == "abs":
            return abs(t)
        if spec.shape == "lpm":
            return max(t - spec.tau, 0.0)
        return max(abs(t) - spec.tau, 0.0)
    raise AssertionError(f)


def outer_derivative(spec: LossSpec, t: float) -> float:
    """A subgradient of the outer function at ``t`` (used by the solver)."""
    f = spec.family
    if f in (ABS_LINEAR, CVAR_ABS_RESIDUAL):
        return float(np.sign(t))
    if f == LOWER_PARTIAL:
        return 1.0 if t > spec.tau else 0.0
    if f == TAU_INSENSITIVE:
        return float(np.sign(t)) if abs(t) > spec.tau else 0.0
    if f == LOG_COSH:
        return math.tanh(t)
    if f == HUBER:
        return max(-1.0, min(1.0, t))
    if f == QUANTILE:
        return spec.gamma if t >= 0.0 else -1.0
    if f == HINGE_POW:
        return -1.0 if t < spec.tau else 0.0
    if f == SVM_ABS_POW:
        return -float(np.sign(spec.tau - t))
    if f == LOG_EXP:
        return -0.5 * (1.0 - math.tanh(0.5 * t))
    if f == SMOOTH_HINGE:
        if t >= 1.0:
            return 0.0
        if t > 0.0:
            return t - 1.0
        return -1.0
    if f == CVAR_MARGIN:
        return -1.0
    if f == HMCR:
        return 1.0
    if f == RIDGE_SQUARE:
        return 2.0 * t
    raise AssertionError(f"no derivative for {f}")


# ---------------------------------------------------------------------------
# inner map phi


def _require(z: Point, variants: tuple[str, ...], spec: LossSpec) -> None:
    if z.variant not in variants:
        raise VariantMismatch(f"{spec.family} does not accept {z.variant} points")


def _dot(beta: np.ndarray, x: np.ndarray) -> float:
    if beta.shape != x.shape:
        raise DimensionMismatch(f"beta has {beta.shape[0]} entries, point has {x.shape[0]}")
    return float(beta @ x)


def inner_value(spec: LossSpec, z: Point) -> float:
    """The scalar ``phi(z)`` fed to the outer function."""
    f = spec.family
    if f in _REGRESSION:
        _require(z, (LABELED, BINARY), spec)
        return float(z.y) - _dot(spec.beta, z.x)
    if f in _MARGIN:
        _require(z, (BINARY, LABELED), spec)
        return float(z.y) * _dot(spec.beta, z.x)
    if f in _INNER:
        _require(z, (PLAIN,), spec)
        return _dot(spec.beta, z.x)
    if f == RIDGE_SQUARE:
        _require(z, (LABELED,), spec)
        return float(z.y) + _dot(spec.beta, z.x)
    if f == FUNCTIONAL_LINEAR:
        _require(z, (SAMPLED,), spec)
        if z.y is None:
            raise VariantMismatch("functional regression needs labeled sampled points")
        w = spec.weight_function
        if w.shape != z.x.shape:
            raise DimensionMismatch("point grid differs from the loss grid")
        return float(z.y) - float(np.sum(z.quad_weights * z.x * w))
    if f == BINARY_CROSS_ENTROPY:
        _require(z, (PLAIN,), spec)
        zz = float(z.x[0])
        if z.dim != 1 or not 0.0 < zz < 1.0:
            raise DomainError("BinaryCrossEntropy needs a scalar point in (0, 1)")
        return spec.beta[0] * zz
    raise AssertionError(f)


def eval_psi(spec: LossSpec, z: Point) -> float:
    """Evaluate ``psi_beta(z)``.

    Raises
    ------
    DomainError
        For ``BinaryCrossEntropy`` outside (0, 1).
    """
    t = inner_value(spec, z)
    if spec.family == BINARY_CROSS_ENTROPY:
        return float(bce_kernel(t))
    return _outer(spec, t)


def eval_loss(spec: LossSpec, z: Point) -> float:
    """Evaluate ``ell = psi ** r``; ``psi >= 0`` is required when ``r > 1``."""
    psi = eval_psi(spec, z)
    if spec.r == 1.0:
        return psi
    if psi < 0.0:
        raise DomainError("psi must be nonnegative when r > 1")
    return psi**spec.r


# ---------------------------------------------------------------------------
# Lipschitz constants


def _check_pairing(spec: LossSpec) -> None:
    if (spec.family, spec.cost.variant) not in _SUPPORTED:
        raise UnsupportedPairing(f"{spec.family} x {spec.cost.variant} is not cataloged")


def inner_constant(spec: LossSpec) -> float:
    """``L_phi``: the change of ``phi`` per unit cost along the best direction."""
    _check_pairing(spec)
    c = spec.cost
    f = spec.family
    b = spec.beta
    if f == FUNCTIONAL_LINEAR:
        w = spec.weight_function
        return float(np.sqrt(np.sum(spec.quad_weights * w * w)))
    if f == RIDGE_SQUARE:
        return float(b @ b + 1.0)
    if f == BINARY_CROSS_ENTROPY:
        return float(b[0])
    if c.variant == FULL_NORM:
        return dual_norm(c.norm, np.append(-b, 1.0))
    if c.variant in (FEATURE_NORM_LABEL_INDICATOR, PLAIN_NORM):
        return dual_norm(c.norm, b)
    if c.variant == SUBSET_NORM:
        idx = np.array(c.index_set)
        return dual_norm(c.norm, b[idx])
    if c.variant == SEMI_NORM_B:
        return float(np.linalg.norm(c.B @ b))
    raise AssertionError(c.variant)


def _bce_anchor_constant(beta: float, zhat: float) -> tuple[float, int]:
    """Per-anchor constant and the side (-1 toward 0, +1 toward 1) attaining it."""
    t = beta * zhat
    ht = float(bce_kernel(t))
    left = -ht / t
    right = (float(bce_kernel(beta)) - ht) / (beta - t)
    if left >= abs(right):
        return beta * left, -1
    return beta * abs(right), 1


def _hard_sigmoid_factor(t: float) -> float:
    return 0.5 if abs(t) <= 1.0 else 1.0 / (1.0 + abs(t))


def anchor_constant(spec: LossSpec, anchor: Point) -> float:
    """Weak-Lipschitz constant valid at ``anchor``."""
    f = spec.family
    if f == BINARY_CROSS_ENTROPY:
        _check_pairing(spec)
        inner_value(spec, anchor)
        return _bce_anchor_constant(float(spec.beta[0]), float(anchor.x[0]))[0]
    if f == HARD_SIGMOID:
        return inner_constant(spec) * _hard_sigmoid_factor(inner_value(spec, anchor))
    return inner_constant(spec)


def weak_lipschitz(spec: LossSpec, anchors: Sequence[Point] | None = None) -> LipschitzCertificate:
    """Closed-form weak-Lipschitz certificate for a cataloged pairing.

    Per-point families (``BinaryCrossEntropy``, ``HardSigmoid``) need the
    anchors; the returned constant is their maximum.

    Raises
    ------
    UnsupportedPairing
    """
    _check_pairing(spec)
    if spec.family in PER_POINT:
        if not anchors:
            raise ValueError(f"{spec.family} constants depend on the anchors")
        per = tuple(anchor_constant(spec, a) for a in anchors)
        return LipschitzCertificate(max(per), "per-point", per, "conditional")
    return LipschitzCertificate(inner_constant(spec))


# ---------------------------------------------------------------------------
# directions and witnesses


def ascent_ray(spec: LossSpec, anchor: Point) -> Callable[[float], Point]:
    """Return ``move`` with ``phi(move(s)) = phi(anchor) + s * L_phi`` and cost ``|s|``.

    Labels are copied verbatim, so indicator costs stay finite.
    """
    c = spec.cost
    b = spec.beta
    f = spec.family
    if f == FUNCTIONAL_LINEAR:
        w = spec.weight_function
        u = -w / inner_constant(spec)
        return lambda s: anchor.with_x(anchor.x + s * u)
    if f in _INNER:
        u = dual_achiever(c.norm, b)
        return lambda s: anchor.with_x(anchor.x + s * u)
    if f in _MARGIN:
        u = float(anchor.y) * dual_achiever(c.norm, b)
        return lambda s: anchor.with_x(anchor.x + s * u)
    if f in _REGRESSION:
        if c.variant == FULL_NORM:
            a = dual_achiever(c.norm, np.append(-b, 1.0))
            base = anchor.stacked()
            return lambda s: anchor.with_stacked(base + s * a)
        if c.variant == FEATURE_NORM_LABEL_INDICATOR:
            u = -dual_achiever(c.norm, b)
        elif c.variant == SUBSET_NORM:
            idx = np.array(c.index_set)
            u = np.zeros_like(b)
            u[idx] = -dual_achiever(c.norm, b[idx])
        elif c.variant == SEMI_NORM_B:
            Bb = c.B @ b
            u = -(c.B.T @ (Bb / np.linalg.norm(Bb)))
        else:
            raise UnsupportedPairing(f"{f} x {c.variant}")
        return lambda s: anchor.with_x(anchor.x + s * u)
    raise UnsupportedPairing(f"no linear ray for {f}")


def _sign(v: float) -> float:
    return -1.0 if v < 0.0 else 1.0


def _piecewise_plan(spec: LossSpec, phi: float) -> tuple[float, float]:
    """Direction sign and the gap to the active linear piece (0 when active)."""
    f = spec.family
    tau = spec.tau if spec.tau is not None else 0.0
    if f in (ABS_LINEAR, CVAR_ABS_RESIDUAL) or (f == FUNCTIONAL_LINEAR and spec.shape == "abs"):
        return _sign(phi), 0.0
    if f == LOWER_PARTIAL or (f == FUNCTIONAL_LINEAR and spec.shape == "lpm"):
        return 1.0, max(tau - phi, 0.0)
    if f == TAU_INSENSITIVE or (f == FUNCTIONAL_LINEAR and spec.shape == "insens"):
        return _sign(phi), max(tau - abs(phi), 0.0)
    if f == HINGE_POW:
        return -1.0, max(phi - tau, 0.0)
    if f == SVM_ABS_POW:
        return -_sign(tau - phi), 0.0
    if f == CVAR_MARGIN:
        return -1.0, 0.0
    if f == HMCR:
        return 1.0, 0.0
    raise AssertionError(f)


def _nonlinear_sign(spec: LossSpec, phi: float) -> float:
    if spec.family in (LOG_COSH, HUBER):
        return _sign(phi)
    return -1.0


_MAX_DOUBLINGS = 60


def _meets(spec: LossSpec, anchor: Point, cand: Point, L: float, eps: float) -> tuple[bool, float]:
    d = eval_cost(spec.cost, cand, anchor)
    if not math.isfinite(d):
        return False, d
    gain = eval_psi(spec, cand) - eval_psi(spec, anchor)
    return gain >= (L - eps) * d, d


def witness(
    spec: LossSpec,
    anchor: Point,
    epsilon: float,
    delta: float,
    mode: str = "A2",
    target: float | None = None,
    lipschitz: float | None = None,
) -> Point:
    """Point ``Z`` with ``psi(Z) - psi(anchor) >= (L - epsilon) d(Z, anchor)``.

    In mode ``A2`` the distance is at least ``delta``; in mode ``B`` it equals
    ``target``.  ``L`` is the anchor's weak-Lipschitz constant unless
    ``lipschitz`` overrides it.

    Raises
    ------
    EpsilonOutOfRange
        Unless ``0 < epsilon < L``.
    WitnessNotFound
        When no admissible point is found (an assumption of the equivalence
        fails for this anchor).
    """
    L = anchor_constant(spec, anchor) if lipschitz is None else float(lipschitz)
    if not 0.0 < epsilon < L:
        raise EpsilonOutOfRange(f"epsilon={epsilon!r} outside (0, {L!r})")
    if mode not in ("A2", "B"):
        raise ValueError(f"unknown witness mode {mode!r}")
    if mode == "B":
        if target is None or target < 0.0:
            raise ValueError("mode B needs a nonnegative target distance")
        if target == 0.0:
            return anchor

    cand = _propose(spec, anchor, epsilon, delta, mode, target, L)
    ok, d = _meets(spec, anchor, cand, L, epsilon)
    if mode == "A2":
        ok = ok and d >= delta
    else:
        ok = ok and abs(d - target) <= 1e-12 * target
    if not ok:
        raise WitnessNotFound(f"{spec.family}: candidate violates the witness contract")
    return cand


def _ensure_length(move: Callable[[float], Point], sign: float, s: float, anchor: Point,
                   spec: LossSpec, delta: float) -> Point:
    # nudge s so that rounding never leaves the distance just below delta
    cand = move(sign * s)
    for _ in range(4):
        d = eval_cost(spec.cost, cand, anchor)
        if d >= delta:
            return cand
        s = s * (delta / d) * (1.0 + 2.0**-50)
        cand = move(sign * s)
    return cand


def _propose(spec: LossSpec, anchor: Point, eps: float, delta: float, mode: str,
             target: float | None, L: float) -> Point:
    f = spec.family
    if f == BINARY_CROSS_ENTROPY:
        return _bce_witness(spec, anchor, eps, delta, mode, L)
    if f == HARD_SIGMOID:
        return _hard_sigmoid_witness(spec, anchor, delta, mode)
    if f == RIDGE_SQUARE:
        return _ridge_witness(spec, anchor, eps, delta, mode, L)

    if inner_constant(spec) == 0.0:
        raise WitnessNotFound("zero Lipschitz constant: psi cannot increase")
    move = ascent_ray(spec, anchor)
    phi = inner_value(spec, anchor)
    if f in PIECEWISE_LINEAR:
        sign, gap = _piecewise_plan(spec, phi)
        if mode == "B":
            return move(sign * target)
        # slope along the ray is L - gap / s; this s keeps the deficit below eps / 2
        s = delta + 2.0 * gap / eps
        return _ensure_length(move, sign, s, anchor, spec, delta)

    sign = _nonlinear_sign(spec, phi)
    if mode == "B":
        return move(sign * target)
    s = delta
    for _ in range(_MAX_DOUBLINGS + 1):
        cand = _ensure_length(move, sign, s, anchor, spec, delta)
        if _meets(spec, anchor, cand, L, eps)[0]:
            return cand
        s *= 2.0
    raise WitnessNotFound(f"{f}: slope condition not met after {_MAX_DOUBLINGS} doublings")


def _bce_witness(spec: LossSpec, anchor: Point, eps: float, delta: float, mode: str, L: float) -> Point:
    if mode == "B":
        raise WitnessNotFound("BinaryCrossEntropy witnesses exist only for r = 1")
    beta = float(spec.beta[0])
    zhat = float(anchor.x[0])
    side = _bce_anchor_constant(beta, zhat)[1]
    room = zhat - delta if side < 0 else 1.0 - zhat - delta
    if room <= 0.0:
        raise WitnessNotFound("radius exceeds the distance to the boundary of (0, 1)")
    for k in range(_MAX_DOUBLINGS + 1):
        off = room * 2.0**-k
        z = off if side < 0 else 1.0 - off
        if not 0.0 < z < 1.0:
            break
        cand = Point.plain([z])
        ok, d = _meets(spec, anchor, cand, L, eps)
        if ok and d >= delta:
            return cand
    raise WitnessNotFound("BinaryCrossEntropy slope condition not met")


def _hard_sigmoid_witness(spec: LossSpec, anchor: Point, delta: float, mode: str) -> Point:
    if mode == "B":
        raise WitnessNotFound("HardSigmoid witnesses exist only for r = 1")
    t = inner_value(spec, anchor)
    if t >= 1.0:
        raise WitnessNotFound("hard sigmoid already saturated at the anchor")
    s = (1.0 - t) / inner_constant(spec)
    if s < delta:
        raise WitnessNotFound("radius beyond the saturation distance")
    return ascent_ray(spec, anchor)(s)


def saturation_point(spec: LossSpec, anchor: Point) -> Point | None:
    """Point where a bounded loss reaches its supremum, if one exists."""
    if spec.family == HARD_SIGMOID:
        t = inner_value(spec, anchor)
        if t >= 1.0 or inner_constant(spec) == 0.0:
            return None
        return ascent_ray(spec, anchor)((1.0 - t) / inner_constant(spec))
    return None


def _ridge_witness(spec: LossSpec, anchor: Point, eps: float, delta: float, mode: str, L: float) -> Point:
    if mode == "B":
        raise WitnessNotFound("RidgeSquare witnesses exist only for r = 1")
    b = np.append(spec.beta, 1.0)
    direction = b / np.linalg.norm(b)
    z = anchor.stacked()
    sign = _sign(float(direction @ z))
    k = max(1.0, math.sqrt(delta))
    for _ in range(_MAX_DOUBLINGS + 1):
        cand = anchor.with_stacked(z + sign * k * direction)
        ok, d = _meets(spec, anchor, cand, L, eps)
        if ok and d >= delta:
            return cand
        k *= 2.0
    raise WitnessNotFound("RidgeSquare slope condition not met")


def empirical_lipschitz(spec: LossSpec, anchor: Point, probe_grid: Sequence[Point]) -> float:
    """Largest difference quotient ``|psi(z) - psi(anchor)| / d(z, anchor)`` over probes.

    Probes at zero or infinite cost are skipped.

    Raises
    ------
    NoFiniteCostProbe
    """
    psi0 = eval_psi(spec, anchor)
    best = None
    for z in probe_grid:
        d = eval_cost(spec.cost, z, anchor)
        if d == 0.0 or not math.isfinite(d):
            continue
        q = abs(eval_psi(spec, z) - psi0) / d
        best = q if best is None else max(best, q)
    if best is None:
        raise NoFiniteCostProbe("no probe at finite positive cost")
    return best


# ---------------------------------------------------------------------------
# gradients in beta (convex solver support)


def psi_grad_beta(spec: LossSpec, z: Point) -> np.ndarray:
    """A subgradient of ``psi_beta(z)`` with respect to ``beta``."""
    f = spec.family
    t = inner_value(spec, z)
    g = outer_derivative(spec, t)
    if f in _REGRESSION:
        return -g * z.x
    if f in _MARGIN:
        return g * float(z.y) * z.x
    if f in _INNER:
        return g * z.x
    if f == RIDGE_SQUARE:
        return g * z.x
    raise AssertionError(f"no beta-gradient for {f}")


def lipschitz_grad_beta(spec: LossSpec) -> np.ndarray:
    """A subgradient of ``L(beta)``; zero where the norm term is at its kink."""
    c = spec.cost
    b = np.array(spec.beta)
    if spec.family == RIDGE_SQUARE:
        return 2.0 * b
    if c.variant == FULL_NORM:
        return -dual_achiever(c.norm, np.append(-b, 1.0))[:-1]
    if not np.any(b):
        return np.zeros_like(b)
    if c.variant in (FEATURE_NORM_LABEL_INDICATOR, PLAIN_NORM):
        return dual_achiever(c.norm, b)
    if c.variant == SUBSET_NORM:
        idx = np.array(c.index_set)
        out = np.zeros_like(b)
        if np.any(b[idx]):
            out[idx] = dual_achiever(c.norm, b[idx])
        return out
    if c.variant == SEMI_NORM_B:
        Bb = c.B @ b
        n = np.linalg.norm(Bb)
        return c.B.T @ (Bb / n) if n > 0 else np.zeros_like(b)
    raise UnsupportedPairing(c.variant)


def tail_loss(spec: LossSpec, t: float) -> LossSpec:
    """The loss ``(G - t)_+`` for a CVaR family, expressed as a cataloged family."""
    if spec.family == CVAR_ABS_RESIDUAL:
        return LossSpec(TAU_INSENSITIVE, spec.beta, spec.cost, tau=t)
    if spec.family == CVAR_MARGIN:
        return LossSpec(HINGE_POW, spec.beta, spec.cost, tau=-t)
    raise UnsupportedPairing(f"no tail loss for {spec.family}")
