"""Sample-space points, finite distributions, couplings and mixtures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyAtoms,
    MarginalMismatch,
    NegativeWeight,
    VariantMismatch,
    WeightSumMismatch,
)

PLAIN = "plain"
LABELED = "labeled"
BINARY = "binary"
SAMPLED = "sampled"
VARIANTS = (PLAIN, LABELED, BINARY, SAMPLED)

_RESCALE_TOL = 1e-9
_SUM_TOL = 1e-12
_MARGINAL_TOL = 1e-9


def _frozen(a: Any) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Point:
    """An element of the sample space.

    ``x`` holds the feature vector (``plain``: the whole point, ``sampled``:
    function values on the quadrature nodes).  ``y`` is the label for the
    ``labeled`` and ``binary`` variants and is optional for ``sampled``.
    Equality and hashing use exact coordinate comparison.
    """

    variant: str
    x: np.ndarray
    y: float | None = None
    quad_weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise VariantMismatch(f"unknown point variant {self.variant!r}")
        object.__setattr__(self, "x", _frozen(self.x))
        if self.variant == PLAIN:
            if self.y is not None or self.quad_weights is not None:
                raise VariantMismatch("plain points carry no label or quadrature")
        elif self.variant in (LABELED, BINARY):
            if self.y is None:
                raise VariantMismatch(f"{self.variant} points need a label")
            if self.variant == BINARY:
                if self.y not in (-1, 1):
                    raise ValueError("binary labels must be -1 or +1")
                object.__setattr__(self, "y", int(self.y))
            else:
                object.__setattr__(self, "y", float(self.y))
        else:
            if self.quad_weights is None:
                raise VariantMismatch("sampled points need quadrature weights")
            qw = _frozen(self.quad_weights)
            if qw.shape != self.x.shape:
                raise DimensionMismatch("values and quadrature weights differ in length")
            if np.any(qw <= 0):
                raise ValueError("quadrature weights must be positive")
            if abs(qw.sum() - 1.0) > _SUM_TOL:
                raise ValueError("quadrature weights must sum to 1")
            object.__setattr__(self, "quad_weights", qw)
            if self.y is not None:
                object.__setattr__(self, "y", float(self.y))

    # constructors -----------------------------------------------------
    @classmethod
    def plain(cls, vec: Any) -> "Point":
        return cls(PLAIN, np.atleast_1d(np.asarray(vec, dtype=float)))

    @classmethod
    def labeled(cls, x: Any, y: float) -> "Point":
        return cls(LABELED, np.atleast_1d(np.asarray(x, dtype=float)), y)

    @classmethod
    def binary(cls, x: Any, y: int) -> "Point":
        return cls(BINARY, np.atleast_1d(np.asarray(x, dtype=float)), y)

    @classmethod
    def sampled(cls, values: Any, quad_weights: Any, y: float | None = None) -> "Point":
        return cls(SAMPLED, values, y, quad_weights)

    # helpers ----------------------------------------------------------
    @property
    def dim(self) -> int:
        """Length of the feature block ``x``."""
        return int(self.x.shape[0])

    @property
    def has_label(self) -> bool:
        return self.y is not None

    def stacked(self) -> np.ndarray:
        """Return ``[x; y]`` for labeled points and ``x`` otherwise."""
        if self.y is None:
            return np.array(self.x)
        return np.append(self.x, float(self.y))

    def with_x(self, x: Any) -> "Point":
        """Copy of this point with a new feature block and the same label."""
        return Point(self.variant, x, self.y, self.quad_weights)

    def with_stacked(self, z: Any) -> "Point":
        """Inverse of :meth:`stacked` for plain and labeled points."""
        z = np.asarray(z, dtype=float)
        if self.variant == PLAIN:
            return Point.plain(z)
        if self.variant == LABELED:
            return Point.labeled(z[:-1], z[-1])
        raise VariantMismatch(f"cannot rebuild a {self.variant} point from a stacked vector")

    def _key(self) -> tuple:
        qw = None if self.quad_weights is None else tuple(self.quad_weights.tolist())
        return (self.variant, tuple(self.x.tolist()), self.y, qw)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Point):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __repr__(self) -> str:
        if self.variant == PLAIN:
            return f"Point.plain({self.x.tolist()})"
        if self.variant == SAMPLED:
            return f"Point.sampled(<{self.dim} nodes>, y={self.y})"
        return f"Point.{self.variant}({self.x.tolist()}, {self.y})"

    # JSON -------------------------------------------------------------
    def to_json(self) -> Any:
        if self.variant == PLAIN:
            return self.x.tolist()
        if self.variant == SAMPLED:
            out: dict[str, Any] = {
                "values": self.x.tolist(),
                "quad_weights": self.quad_weights.tolist(),
            }
            if self.y is not None:
                out["y"] = self.y
            return out
        return {"x": self.x.tolist(), "y": self.y}

    @classmethod
    def from_json(cls, obj: Any, variant: str) -> "Point":
        if variant == PLAIN:
            return cls.plain(obj)
        if variant == SAMPLED:
            return cls.sampled(obj["values"], obj["quad_weights"], obj.get("y"))
        if variant in (LABELED, BINARY):
            return cls(variant, obj["x"], obj["y"])
        raise VariantMismatch(f"unknown point variant {variant!r}")


def check_compatible(a: Point, b: Point) -> None:
    """Raise unless ``a`` and ``b`` share variant and dimension."""
    if a.variant != b.variant:
        raise VariantMismatch(f"{a.variant} vs {b.variant}")
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension {a.dim} vs {b.dim}")


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finitely supported probability distribution ``sum_i mu_i chi_{Z_i}``.

    Build instances with :func:`make_distribution`, which normalises small
    arithmetic drift in the weights.
    """

    atoms: tuple[Point, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        atoms = tuple(self.atoms)
        if not atoms:
            raise EmptyAtoms("a distribution needs at least one atom")
        w = _frozen(self.weights)
        if w.shape[0] != len(atoms):
            raise DimensionMismatch("atoms and weights differ in length")
        if np.any(w < 0):
            raise NegativeWeight("weights must be nonnegative")
        if abs(w.sum() - 1.0) > _SUM_TOL:
            raise WeightSumMismatch(f"weights sum to {w.sum()!r}")
        for a in atoms[1:]:
            check_compatible(atoms[0], a)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def variant(self) -> str:
        return self.atoms[0].variant

    @property
    def dim(self) -> int:
        return self.atoms[0].dim

    def __len__(self) -> int:
        return len(self.atoms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return self.atoms == other.atoms and np.array_equal(self.weights, other.weights)

    __hash__ = None  # type: ignore[assignment]

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "atoms": [a.to_json() for a in self.atoms],
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteDistribution":
        variant = obj["variant"]
        atoms = [Point.from_json(a, variant) for a in obj["atoms"]]
        return make_distribution(atoms, obj["weights"])


def make_distribution(atoms: Sequence[Point], weights: Iterable[float]) -> DiscreteDistribution:
    """Validate and normalise a finite distribution.

    Weights whose total lies within 1e-9 of one are rescaled to sum to one;
    anything further off is rejected.

    Raises
    ------
    EmptyAtoms, NegativeWeight, WeightSumMismatch, DimensionMismatch
    """
    atoms = tuple(atoms)
    if not atoms:
        raise EmptyAtoms("a distribution needs at least one atom")
    w = np.array(list(weights), dtype=float).reshape(-1)
    if w.shape[0] != len(atoms):
        raise DimensionMismatch("atoms and weights differ in length")
    if np.any(w < 0) or np.any(~np.isfinite(w)):
        raise NegativeWeight("weights must be finite and nonnegative")
    total = w.sum()
    if abs(total - 1.0) > _RESCALE_TOL:
        raise WeightSumMismatch(f"weights sum to {total!r}")
    return DiscreteDistribution(atoms, w / total)


def point_mass(z: Point) -> DiscreteDistribution:
    """The Dirac distribution at ``z``."""
    return DiscreteDistribution((z,), np.ones(1))


def uniform(atoms: Sequence[Point]) -> DiscreteDistribution:
    n = len(atoms)
    return make_distribution(atoms, np.full(n, 1.0 / n) if n else [])


def expectation(dist: DiscreteDistribution, f: Callable[[Point], float]) -> float:
    """Return ``sum_i mu_i f(Z_i)``, summed in atom order.

    Zero-weight atoms are skipped, so an infinite value there contributes
    nothing (the ``0 * inf = 0`` convention).
    """
    total = 0.0
    for mu, z in zip(dist.weights, dist.atoms):
        if mu != 0.0:
            total += float(mu) * float(f(z))
    return total


def mix(components: Sequence[DiscreteDistribution], weights: Iterable[float]) -> DiscreteDistribution:
    """Mixture ``sum_k w_k P_k`` with duplicate atoms merged.

    Atoms are merged on exact coordinate equality and keep their order of
    first appearance; atoms whose merged weight is exactly zero are dropped.
    """
    comps = list(components)
    w = np.array(list(weights), dtype=float).reshape(-1)
    if not comps:
        raise EmptyAtoms("nothing to mix")
    if len(comps) != w.shape[0]:
        raise DimensionMismatch("components and weights differ in length")
    if np.any(w < 0):
        raise NegativeWeight("mixture weights must be nonnegative")
    if abs(w.sum() - 1.0) > _RESCALE_TOL:
        raise WeightSumMismatch(f"mixture weights sum to {w.sum()!r}")
    ref = comps[0].atoms[0]
    merged: dict[Point, float] = {}
    for wk, comp in zip(w, comps):
        for mu, z in zip(comp.weights, comp.atoms):
            check_compatible(ref, z)
            merged[z] = merged.get(z, 0.0) + float(wk) * float(mu)
    atoms = [z for z, m in merged.items() if m > 0.0]
    return make_distribution(atoms, [merged[z] for z in atoms])


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint distribution ``pi`` with prescribed row and column marginals."""

    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2:
            raise DimensionMismatch("coupling matrix must be two-dimensional")
        p = _frozen(self.row_marginal)
        q = _frozen(self.col_marginal)
        if m.shape != (p.shape[0], q.shape[0]):
            raise DimensionMismatch(f"matrix {m.shape} vs marginals {p.shape[0]}x{q.shape[0]}")
        if np.any(m < 0):
            raise NegativeWeight("coupling entries must be nonnegative")
        if np.max(np.abs(m.sum(axis=1) - p)) > _MARGINAL_TOL:
            raise MarginalMismatch("row sums differ from the row marginal")
        if np.max(np.abs(m.sum(axis=0) - q)) > _MARGINAL_TOL:
            raise MarginalMismatch("column sums differ from the column marginal")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "row_marginal", p)
        object.__setattr__(self, "col_marginal", q)

    @classmethod
    def independent(cls, p: Any, q: Any) -> "Coupling":
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        return cls(np.outer(p, q), p, q)

    def transport_cost(self, costs: np.ndarray) -> float:
        """``sum_ij pi_ij c_ij`` with ``0 * inf = 0``."""
        costs = np.asarray(costs, dtype=float)
        mask = self.matrix > 0
        return float(np.sum(self.matrix[mask] * costs[mask]))

    def to_csv(self) -> str:
        rows = [",".join(format(v, ".17g") for v in row) for row in self.matrix]
        return "\n".join(rows) + "\n"
