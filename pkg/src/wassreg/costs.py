"""Cost functions ``d(z', z)`` on extended reals and dual-norm utilities.

Infinite costs are returned as ``math.inf``; indicator blocks compare label
coordinates with exact equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import DimensionMismatch, VariantMismatch, ZeroVector
from .space import BINARY, LABELED, PLAIN, SAMPLED, Point, check_compatible

L1 = "L1"
L2 = "L2"
LINF = "Linf"
WEIGHTED_L2 = "WeightedL2"
NORM_KINDS = (L1, L2, LINF, WEIGHTED_L2)

FULL_NORM = "FullNorm"
FEATURE_NORM_LABEL_INDICATOR = "FeatureNormLabelIndicator"
SUBSET_NORM = "SubsetNorm"
SEMI_NORM_B = "SemiNormB"
PRODUCT_COST = "ProductCost"
L2_FUNCTION_LABEL_INDICATOR = "L2FunctionLabelIndicator"
PLAIN_NORM = "PlainNorm"
ABSOLUTE_SCALAR = "AbsoluteScalar"
COST_VARIANTS = (
    FULL_NORM,
    FEATURE_NORM_LABEL_INDICATOR,
    SUBSET_NORM,
    SEMI_NORM_B,
    PRODUCT_COST,
    L2_FUNCTION_LABEL_INDICATOR,
    PLAIN_NORM,
    ABSOLUTE_SCALAR,
)
_NEEDS_NORM = (FULL_NORM, FEATURE_NORM_LABEL_INDICATOR, SUBSET_NORM, PLAIN_NORM)
_RANGE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GroundNorm:
    """A norm on R^n: ``L1``, ``L2``, ``Linf`` or ``WeightedL2``.

    ``WeightedL2`` is ``sqrt(sum_k w_k v_k^2)``; its dual is
    ``sqrt(sum_k v_k^2 / w_k)``.
    """

    kind: str = L2
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == WEIGHTED_L2:
            if self.weights is None:
                raise ValueError("WeightedL2 needs weights")
            w = np.array(self.weights, dtype=float).reshape(-1)
            if np.any(~(w > 0)):
                raise ValueError("WeightedL2 weights must be strictly positive")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        elif self.weights is not None:
            raise ValueError(f"{self.kind} takes no weights")

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(-1)
        if self.kind == WEIGHTED_L2 and v.shape != self.weights.shape:
            raise DimensionMismatch(f"vector of length {v.shape[0]} vs {self.weights.shape[0]} weights")
        return v

    def __call__(self, v: Any) -> float:
        v = self._check(v)
        if self.kind == L1:
            return float(np.sum(np.abs(v)))
        if self.kind == L2:
            return _weighted_l2(v)
        if self.kind == LINF:
            return float(np.max(np.abs(v))) if v.size else 0.0
        return _weighted_l2(v, self.weights)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroundNorm):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __hash__(self) -> int:
        return hash(repr(self.to_json()))

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.weights is not None:
            out["weights"] = self.weights.tolist()
        return out

    @classmethod
    def from_json(cls, obj: Any) -> "GroundNorm":
        if isinstance(obj, str):
            return cls(obj)
        return cls(obj["kind"], obj.get("weights"))


def norm_value(norm: GroundNorm, v: Any) -> float:
    return norm(v)


def dual_norm(norm: GroundNorm, v: Any) -> float:
    """Dual norm ``max_{||u|| <= 1} <v, u>``."""
    v = norm._check(v)
    if norm.kind == L1:
        return float(np.max(np.abs(v))) if v.size else 0.0
    if norm.kind == L2:
        return _weighted_l2(v)
    if norm.kind == LINF:
        return float(np.sum(np.abs(v)))
    return _weighted_l2(v, 1.0 / norm.weights)


def _weighted_l2(v: np.ndarray, w: np.ndarray | None = None) -> float:
    # rescale first so tiny or huge entries do not under- or overflow when squared
    m = float(np.max(np.abs(v))) if v.size else 0.0
    if m == 0.0 or not math.isfinite(m):
        return m
    s = v / m
    return m * float(np.sqrt(np.sum(s * s if w is None else w * s * s)))


def dual_achiever(norm: GroundNorm, v: Any) -> np.ndarray:
    """Unit vector ``u`` (in ``norm``) with ``<v, u> = dual_norm(norm, v)``.

    For ``L1`` the extreme coordinate is used, lowest index on ties.

    Raises
    ------
    ZeroVector
        If ``v`` is identically zero.
    """
    v = norm._check(v)
    if not np.any(v):
        raise ZeroVector("dual achiever undefined at the zero vector")
    if norm.kind == L2:
        s = v / np.max(np.abs(v))
        return s / _weighted_l2(s)
    if norm.kind == LINF:
        return np.sign(v)
    if norm.kind == L1:
        k = int(np.argmax(np.abs(v)))
        u = np.zeros_like(v)
        u[k] = np.sign(v[k])
        return u
    s = v / np.max(np.abs(v))
    return (s / norm.weights) / dual_norm(norm, s)


@dataclass(frozen=True, eq=False)
class CostSpec:
    """One cost family ``d(z', z)``; build with the class-method constructors."""

    variant: str
    norm: GroundNorm | None = None
    index_set: tuple[int, ...] | None = None
    B: np.ndarray | None = None
    _pinv: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.variant not in COST_VARIANTS:
            raise ValueError(f"unknown cost variant {self.variant!r}")
        if self.variant in _NEEDS_NORM:
            if not isinstance(self.norm, GroundNorm):
                raise ValueError(f"{self.variant} needs a ground norm")
        elif self.norm is not None:
            raise ValueError(f"{self.variant} takes no ground norm")
        if self.variant == SUBSET_NORM:
            idx = tuple(sorted(set(int(i) for i in (self.index_set or ()))))
            if not idx or idx[0] < 0:
                raise ValueError("SubsetNorm needs a nonempty set of nonnegative indices")
            object.__setattr__(self, "index_set", idx)
        if self.variant == SEMI_NORM_B:
            B = np.array(self.B, dtype=float)
            if B.ndim != 2 or B.size == 0:
                raise ValueError("SemiNormB needs a nonempty s x n matrix")
            B.setflags(write=False)
            object.__setattr__(self, "B", B)
            pinv = np.linalg.pinv(B.T)
            pinv.setflags(write=False)
            object.__setattr__(self, "_pinv", pinv)

    # constructors -----------------------------------------------------
    @classmethod
    def full_norm(cls, norm: GroundNorm | None = None) -> "CostSpec":
        return cls(FULL_NORM, norm or GroundNorm())

    @classmethod
    def feature_norm_label_indicator(cls, norm: GroundNorm | None = None) -> "CostSpec":
        return cls(FEATURE_NORM_LABEL_INDICATOR, norm or GroundNorm())

    @classmethod
    def subset_norm(cls, index_set: Sequence[int], norm: GroundNorm | None = None) -> "CostSpec":
        return cls(SUBSET_NORM, norm or GroundNorm(), tuple(index_set))

    @classmethod
    def semi_norm_b(cls, B: Any) -> "CostSpec":
        return cls(SEMI_NORM_B, B=B)

    @classmethod
    def product_cost(cls) -> "CostSpec":
        return cls(PRODUCT_COST)

    @classmethod
    def l2_function_label_indicator(cls) -> "CostSpec":
        return cls(L2_FUNCTION_LABEL_INDICATOR)

    @classmethod
    def plain_norm(cls, norm: GroundNorm | None = None) -> "CostSpec":
        return cls(PLAIN_NORM, norm or GroundNorm())

    @classmethod
    def absolute_scalar(cls) -> "CostSpec":
        return cls(ABSOLUTE_SCALAR)

    @property
    def has_label_indicator(self) -> bool:
        """True when finite cost requires the label to stay fixed."""
        return self.variant in (
            FEATURE_NORM_LABEL_INDICATOR,
            SUBSET_NORM,
            SEMI_NORM_B,
            L2_FUNCTION_LABEL_INDICATOR,
        )

    def describe(self) -> str:
        if self.norm is None:
            return self.variant
        return f"{self.variant}({self.norm.kind})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CostSpec):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __hash__(self) -> int:
        return hash(repr(self.to_json()))

    def to_json(self) -> dict:
        out: dict[str, Any] = {"variant": self.variant}
        if self.norm is not None:
            out["norm"] = self.norm.to_json()
        if self.index_set is not None:
            out["index_set"] = list(self.index_set)
        if self.B is not None:
            out["B"] = self.B.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "CostSpec":
        norm = GroundNorm.from_json(obj["norm"]) if "norm" in obj else None
        idx = tuple(obj["index_set"]) if "index_set" in obj else None
        return cls(obj["variant"], norm, idx, obj.get("B"))


def _require(z: Point, variants: tuple[str, ...], spec: CostSpec) -> None:
    if z.variant not in variants:
        raise VariantMismatch(f"{spec.variant} does not accept {z.variant} points")


def eval_cost(spec: CostSpec, z1: Point, z2: Point) -> float:
    """Evaluate ``d(z1, z2)`` in ``[0, inf]``.

    Raises
    ------
    VariantMismatch, DimensionMismatch
    """
    check_compatible(z1, z2)
    v = spec.variant
    if v == FULL_NORM:
        _require(z1, (LABELED, BINARY), spec)
        return spec.norm(z1.stacked() - z2.stacked())
    if v == PLAIN_NORM:
        _require(z1, (PLAIN,), spec)
        return spec.norm(z1.x - z2.x)
    if v == ABSOLUTE_SCALAR:
        _require(z1, (PLAIN,), spec)
        if z1.dim != 1:
            raise DimensionMismatch("AbsoluteScalar works on scalar points")
        return abs(float(z1.x[0]) - float(z2.x[0]))
    if v == PRODUCT_COST:
        _require(z1, (PLAIN, LABELED), spec)
        a, b = z1.stacked(), z2.stacked()
        diff = np.linalg.norm(a - b)
        if diff == 0.0:
            return 0.0
        return float(diff * np.linalg.norm(a + b))
    if v == L2_FUNCTION_LABEL_INDICATOR:
        _require(z1, (SAMPLED,), spec)
        if not np.array_equal(z1.quad_weights, z2.quad_weights):
            raise DimensionMismatch("sampled points use different quadrature grids")
        if z1.y != z2.y:
            return math.inf
        d = z1.x - z2.x
        return float(np.sqrt(np.sum(z1.quad_weights * d * d)))

    _require(z1, (LABELED, BINARY), spec)
    if z1.y != z2.y:
        return math.inf
    d = z1.x - z2.x
    if v == FEATURE_NORM_LABEL_INDICATOR:
        return spec.norm(d)
    if v == SUBSET_NORM:
        idx = np.array(spec.index_set)
        if idx[-1] >= z1.dim:
            raise DimensionMismatch("SubsetNorm index outside the feature dimension")
        rest = np.ones(z1.dim, dtype=bool)
        rest[idx] = False
        if np.any(d[rest] != 0.0):
            return math.inf
        return spec.norm(d[idx])
    # SemiNormB: minimum-norm xbar with B^T xbar = d
    if spec.B.shape[1] != z1.dim:
        raise DimensionMismatch(f"B has {spec.B.shape[1]} columns, points have {z1.dim} features")
    if not np.any(d):
        return 0.0
    xbar = spec._pinv @ d
    resid = np.linalg.norm(spec.B.T @ xbar - d)
    if resid > _RANGE_TOL * np.linalg.norm(d):
        return math.inf
    return float(np.linalg.norm(xbar))


def cost_matrix(spec: CostSpec, rows: Sequence[Point], cols: Sequence[Point], r: float = 1.0) -> np.ndarray:
    """Matrix of ``d(cols[j], rows[i]) ** r`` with infinities kept."""
    out = np.empty((len(rows), len(cols)))
    for i, zi in enumerate(rows):
        for j, zj in enumerate(cols):
            out[i, j] = eval_cost(spec, zj, zi)
    if r != 1.0:
        with np.errstate(over="ignore"):
            out = out**r
    return out
