"""Subgradient descent on the regularized objective.

For a convex cataloged family the worst-case loss equals
``((E[psi^r])^(1/r) + L(beta) delta)^r``; the solver minimizes the r-th root

    F(beta) = (E[psi_beta^r])^(1/r) + L(beta) delta,

which has the same minimizers.  The risk families use
``CVaR_alpha(G) + L delta / (1 - alpha)`` and its higher-moment analogue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .costs import CostSpec
from .equivalence import cvar, hmcr_threshold
from .errors import DimensionMismatch, DivergenceDetected, NonConvexFamily
from .losses import (
    ABS_LINEAR,
    CVAR_ABS_RESIDUAL,
    CVAR_MARGIN,
    HINGE_POW,
    HMCR,
    HUBER,
    LOG_COSH,
    LOG_EXP,
    LOWER_PARTIAL,
    QUANTILE,
    RIDGE_SQUARE,
    SMOOTH_HINGE,
    TAU_INSENSITIVE,
    LossSpec,
    eval_psi,
    inner_constant,
    lipschitz_grad_beta,
    psi_grad_beta,
)
from .space import DiscreteDistribution

CONVEX_FAMILIES = (
    ABS_LINEAR,
    LOWER_PARTIAL,
    TAU_INSENSITIVE,
    LOG_COSH,
    HUBER,
    QUANTILE,
    HINGE_POW,
    LOG_EXP,
    SMOOTH_HINGE,
    RIDGE_SQUARE,
    CVAR_ABS_RESIDUAL,
    CVAR_MARGIN,
    HMCR,
)
STEP_RULES = ("sqrt", "polyak")
DIVERGENCE_FACTOR = 1e3


@dataclass(frozen=True)
class SolveConfig:
    """Settings for :func:`minimize_regularized`.

    Parameters
    ----------
    family : str
        One of :data:`CONVEX_FAMILIES`.
    cost : CostSpec
    delta : float
        Radius, ``>= 0``.
    r : float
        Exponent (moment order for ``Hmcr``).
    params : dict
        Extra :class:`LossSpec` fields such as ``tau``, ``gamma`` or ``alpha``.
    eta0 : float
        Initial step; under the ``sqrt`` rule step ``k`` moves a distance
        ``eta0 / sqrt(k)`` along the normalized subgradient.
    max_iter : int
        Iteration cap.
    tol : float
        Stop when the best objective improves by less than ``tol`` over
        ``stall`` consecutive iterations.
    stall : int
    step_rule : str
        ``sqrt`` or ``polyak``.  The Polyak rule steps by
        ``(F - target) / |g|^2`` and needs a known optimal value ``target``.
    target : float, optional
    record_trajectory : bool
    """

    family: str
    cost: CostSpec
    delta: float
    r: float = 1.0
    params: dict = field(default_factory=dict)
    eta0: float = 1.0
    max_iter: int = 5000
    tol: float = 1e-12
    stall: int = 500
    step_rule: str = "sqrt"
    target: float | None = None
    record_trajectory: bool = False

    def __post_init__(self) -> None:
        if self.family not in CONVEX_FAMILIES:
            raise NonConvexFamily(f"{self.family} is evaluation-only")
        if not self.delta >= 0.0:
            raise ValueError("delta must be nonnegative")
        if not self.eta0 > 0.0:
            raise ValueError("eta0 must be positive")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.step_rule == "polyak" and self.target is None:
            raise ValueError("the polyak rule needs a target value")
        if self.max_iter < 0 or self.stall < 1:
            raise ValueError("max_iter must be >= 0 and stall >= 1")

    def loss(self, beta: Any) -> LossSpec:
        return LossSpec(self.family, beta, self.cost, r=self.r, **self.params)

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "cost": self.cost.to_json(),
            "delta": self.delta,
            "r": self.r,
            "params": dict(self.params),
            "eta0": self.eta0,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "stall": self.stall,
            "step_rule": self.step_rule,
            "target": self.target,
            "record_trajectory": self.record_trajectory,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SolveConfig":
        obj = dict(obj)
        obj["cost"] = CostSpec.from_json(obj["cost"])
        return cls(**obj)


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Best iterate found, its objective and the number of iterations run."""

    beta: np.ndarray
    objective: float
    iterations: int
    trajectory: list[float] | None = None

    def to_json(self) -> dict:
        return {
            "beta": np.asarray(self.beta).tolist(),
            "objective": self.objective,
            "iterations": self.iterations,
            "trajectory": self.trajectory,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SolveResult":
        return cls(np.array(obj["beta"], dtype=float), obj["objective"], obj["iterations"], obj.get("trajectory"))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SolveResult):
            return NotImplemented
        return self.to_json() == other.to_json()


def objective(config: SolveConfig, data: DiscreteDistribution, beta: Any) -> float:
    """``F(beta)``."""
    return objective_and_subgradient(config, data, beta)[0]


def objective_and_subgradient(
    config: SolveConfig, data: DiscreteDistribution, beta: Any
) -> tuple[float, np.ndarray]:
    """``F(beta)`` and one subgradient."""
    spec = config.loss(beta)
    w = data.weights
    psi = np.array([eval_psi(spec, z) for z in data.atoms])
    grads = np.array([psi_grad_beta(spec, z) for z in data.atoms])
    L = inner_constant(spec)
    dL = lipschitz_grad_beta(spec)
    delta = config.delta
    f = config.family
    if f in (CVAR_ABS_RESIDUAL, CVAR_MARGIN):
        a = spec.alpha
        value = cvar(data, lambda z: eval_psi(spec, z), a)
        order = np.argsort(psi, kind="stable")
        k = int(np.searchsorted(np.cumsum(w[order]), a * (1.0 - 1e-12), side="left"))
        t = psi[order[min(k, len(psi) - 1)]]
        above = psi > t
        at = psi == t
        # the quantile atom carries the leftover tail mass
        frac = (1.0 - a - float(w[above].sum())) / float(w[at].sum())
        g = (w * (above + frac * at)) @ grads / (1.0 - a)
        return value + L * delta / (1.0 - a), g + dL * delta / (1.0 - a)
    if f == HMCR:
        a, r = spec.alpha, spec.r
        t, value = hmcr_threshold(psi, w, a, r)
        tail = np.maximum(psi - t, 0.0)
        m = float(w @ tail**r)
        if m == 0.0:
            g = np.zeros_like(spec.beta)
        elif r == 1.0:
            at = psi == t
            frac = (1.0 - a - float(w[tail > 0].sum())) / float(w[at].sum()) if at.any() else 0.0
            g = (w * ((tail > 0) + frac * at)) @ grads
        else:
            g = m ** (1.0 / r - 1.0) * ((w * tail ** (r - 1.0)) @ grads)
        return value + L * delta / (1.0 - a), g / (1.0 - a) + dL * delta / (1.0 - a)
    r = spec.r
    if r == 1.0:
        return float(w @ psi) + L * delta, w @ grads + dL * delta
    E = float(w @ psi**r)
    if E == 0.0:
        return L * delta, dL * delta
    root = E ** (1.0 / r)
    g = E ** (1.0 / r - 1.0) * ((w * psi ** (r - 1.0)) @ grads)
    return root + L * delta, g + dL * delta


def _check_data(config: SolveConfig, data: DiscreteDistribution, beta: np.ndarray) -> None:
    config.loss(beta)
    if data.dim != beta.shape[0]:
        raise DimensionMismatch(f"data dimension {data.dim} differs from beta size {beta.shape[0]}")


def minimize_regularized(config: SolveConfig, data: DiscreteDistribution, beta0: Any) -> SolveResult:
    """Subgradient descent returning the best iterate seen.

    Raises
    ------
    NonConvexFamily
        Raised by :class:`SolveConfig` for evaluation-only families.
    DivergenceDetected
        When an iterate's objective exceeds ``1e3`` times the initial one.
    """
    beta = np.array(beta0, dtype=float).reshape(-1)
    _check_data(config, data, beta)
    F, g = objective_and_subgradient(config, data, beta)
    F0 = F
    limit = DIVERGENCE_FACTOR * abs(F0) if F0 != 0.0 else math.inf
    best_beta, best_F = beta.copy(), F
    traj = [F] if config.record_trajectory else None
    last_gain = 0
    k = 0
    for k in range(1, config.max_iter + 1):
        gn2 = float(g @ g)
        if gn2 == 0.0:
            break
        if config.step_rule == "polyak":
            gap = F - config.target
            if gap <= 0.0:
                break
            step = gap / gn2
        else:
            step = config.eta0 / math.sqrt(k) / math.sqrt(gn2)
        beta = beta - step * g
        F, g = objective_and_subgradient(config, data, beta)
        if not math.isfinite(F) or F > limit:
            raise DivergenceDetected(f"objective {F!r} at iteration {k} exceeds {limit!r}")
        if traj is not None:
            traj.append(F)
        if F < best_F - config.tol:
            last_gain = k
        if F < best_F:
            best_beta, best_F = beta.copy(), F
        if k - last_gain >= config.stall:
            break
    return SolveResult(best_beta, best_F, k, traj)


def finite_difference_check(
    config: SolveConfig, data: DiscreteDistribution, beta: Any, h: float = 1e-5, seed: int = 0
) -> float:
    """Largest deviation between the analytic subgradient and central differences.

    ``beta`` is first shifted by a seeded uniform perturbation of size ``h``
    to move off measure-zero kinks.  The deviation is
    ``max_j |g_j - fd_j| / max(max_j |fd_j|, 1)``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    b = np.array(beta, dtype=float).reshape(-1)
    b = b + h * rng.uniform(-1.0, 1.0, size=b.shape)
    _, g = objective_and_subgradient(config, data, b)
    fd = np.empty_like(b)
    for j in range(b.shape[0]):
        e = np.zeros_like(b)
        e[j] = h
        fd[j] = (objective(config, data, b + e) - objective(config, data, b - e)) / (2.0 * h)
    return float(np.max(np.abs(g - fd)) / max(float(np.max(np.abs(fd))), 1.0))
