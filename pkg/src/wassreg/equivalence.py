"""Worst-case bounds, constructed worst-case distributions and risk measures.

For a loss ``ell = psi ** r`` with weak-Lipschitz constant ``L``:

* ``U = ((E[ell])^(1/r) + L delta)^r`` bounds the worst-case loss from above;
* ``L_lower = sum_i mu_i L_i`` (each ``L_i`` a single-atom worst case) bounds
  it from below;
* :func:`worst_case_distribution` builds a feasible distribution whose
  expected loss is within ``epsilon`` of ``U``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .costs import cost_matrix, dual_norm, eval_cost
from .errors import (
    AlphaOutOfRange,
    EpsilonOutOfRange,
    GridMissingAtoms,
    NoPerPointCertificate,
    UnsupportedPairing,
)
from .losses import (
    BINARY_CROSS_ENTROPY,
    CVAR_ABS_RESIDUAL,
    CVAR_MARGIN,
    HARD_SIGMOID,
    PER_POINT,
    LossSpec,
    eval_loss,
    eval_psi,
    inner_value,
    weak_lipschitz,
    witness,
)
from .oracle import solve_budgeted_lp, wasserstein_discrete
from .space import DiscreteDistribution, Point, expectation, make_distribution, mix, point_mass

ScalarFn = Callable[[Point], float]
ALPHA_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class BoundsReport:
    """Empirical loss and the bounds around the worst-case loss at one radius.

    ``per_point_lower`` and ``per_point_upper`` are ``None`` for families
    without per-point constants; ``lower_L`` is ``None`` when no grid was
    supplied.
    """

    empirical_loss: float
    upper_U: float
    lower_L: float | None
    per_point_lower: float | None
    per_point_upper: float | None
    delta: float
    r: float
    lipschitz: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class WorstCaseCertificate:
    """A constructed distribution and its independently verified properties."""

    distribution: DiscreteDistribution
    achieved_value: float
    wasserstein_radius: float
    epsilon: float
    regime: str
    upper_U: float
    epsilon_effective: float
    delta: float

    def radius_ok(self, rel: float = 1e-9) -> bool:
        return self.wasserstein_radius <= self.delta * (1.0 + rel)

    def value_ok(self, slack: float = 0.0) -> bool:
        return self.achieved_value >= self.upper_U - self.epsilon_effective - slack

    def to_json(self) -> dict:
        return {
            "distribution": self.distribution.to_json(),
            "achieved_value": self.achieved_value,
            "wasserstein_radius": self.wasserstein_radius,
            "epsilon": self.epsilon,
            "regime": self.regime,
            "upper_U": self.upper_U,
            "epsilon_effective": self.epsilon_effective,
            "delta": self.delta,
        }


def empirical_loss(loss: LossSpec, dist: DiscreteDistribution) -> float:
    """``E_{P_N}[ell]``."""
    return expectation(dist, lambda z: eval_loss(loss, z))


def _u_formula(E: float, L: float, delta: float, r: float) -> float:
    if delta == 0.0:
        return E
    if r == 1.0:
        return E + L * delta
    return (E ** (1.0 / r) + L * delta) ** r


def upper_bound_U(loss: LossSpec, dist: DiscreteDistribution, delta: float) -> float:
    """``((E[ell])^(1/r) + L delta)^r``; exactly ``E[ell]`` at ``delta = 0``.

    Raises
    ------
    UnsupportedPairing
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    L = weak_lipschitz(loss, dist.atoms).constant
    return _u_formula(empirical_loss(loss, dist), L, float(delta), loss.r)


def lower_bound_L(loss: LossSpec, dist: DiscreteDistribution, delta: float, grid: Sequence[Point]) -> float:
    """``sum_i mu_i L_i`` where ``L_i`` is the grid worst case around atom ``i`` alone.

    Raises
    ------
    GridMissingAtoms
    """
    present = set(grid)
    if any(z not in present for z in dist.atoms):
        raise GridMissingAtoms("the grid must contain every atom")
    ell = np.array([eval_loss(loss, z) for z in grid])
    C = cost_matrix(loss.cost, dist.atoms, grid, loss.r)
    budget = float(delta) ** loss.r
    total = 0.0
    for i, mu in enumerate(dist.weights):
        if mu == 0.0:
            continue
        sol = solve_budgeted_lp(np.ones(1), ell, C[i : i + 1], budget)
        total += float(mu) * sol.value
    return total


def per_point_bounds(loss: LossSpec, dist: DiscreteDistribution, delta: float) -> tuple[float, float]:
    """``(E + sum_i mu_i L_i delta, E + max_i L_i delta)`` from per-anchor constants.

    Raises
    ------
    NoPerPointCertificate
    """
    if loss.family not in PER_POINT or loss.r != 1.0:
        raise NoPerPointCertificate(f"{loss.family} has no per-point certificate")
    cert = weak_lipschitz(loss, dist.atoms)
    per = np.array(cert.per_point_constants)
    E = empirical_loss(loss, dist)
    return E + float(dist.weights @ per) * delta, E + float(per.max()) * delta


def bounds_report(
    loss: LossSpec, dist: DiscreteDistribution, delta: float, grid: Sequence[Point] | None = None
) -> BoundsReport:
    cert = weak_lipschitz(loss, dist.atoms)
    E = empirical_loss(loss, dist)
    U = _u_formula(E, cert.constant, float(delta), loss.r)
    lower = lower_bound_L(loss, dist, delta, grid) if grid is not None else None
    pl = pu = None
    if loss.family in PER_POINT:
        pl, pu = per_point_bounds(loss, dist, delta)
    return BoundsReport(E, U, lower, pl, pu, float(delta), loss.r, cert.constant)


def classify_regime(loss: LossSpec, dist: DiscreteDistribution, delta: float) -> str:
    """``equivalent``, ``saturated`` or ``unverified``.

    Only the per-point families can fall outside ``equivalent``: the
    equivalence needs a common constant and witnesses within reach.
    """
    if loss.family not in PER_POINT:
        weak_lipschitz(loss)
        return "equivalent"
    cert = weak_lipschitz(loss, dist.atoms)
    same = max(cert.per_point_constants) - min(cert.per_point_constants) <= 1e-15 * cert.constant
    if loss.family == HARD_SIGMOID:
        nb = dual_norm(loss.cost.norm, loss.beta)
        reach = [max(1.0 - inner_value(loss, z), 0.0) / nb if nb > 0 else 0.0 for z in dist.atoms]
    else:
        reach = [float(z.x[0]) for z in dist.atoms]
    if same and all(s > delta for s in reach):
        return "equivalent"
    if dist.size == 1 and reach[0] <= delta:
        return "saturated"
    return "unverified"


# ---------------------------------------------------------------------------
# worst-case construction


def worst_case_distribution(
    loss: LossSpec, dist: DiscreteDistribution, delta: float, epsilon: float | None = None
) -> WorstCaseCertificate:
    """Construct a feasible distribution with expected loss at least ``U - eps_eff``.

    ``r = 1`` mixes each atom with its witness at weight ``delta / d``; ``r > 1``
    with nonzero empirical loss moves every atom to a witness at distance
    ``psi_i delta / E^(1/r)``; ``r > 1`` with zero empirical loss mixes at
    weight ``(delta / d)^r``.  The value and radius stored in the certificate
    are recomputed from the distribution itself.

    Raises
    ------
    EpsilonOutOfRange
        Unless ``0 < epsilon < min(L, delta L)``.
    WitnessNotFound
    """
    cert = weak_lipschitz(loss, dist.atoms)
    L = cert.constant
    r = loss.r
    delta = float(delta)
    bound = min(L, delta * L)
    if epsilon is None:
        epsilon = bound / 1e3
    if not 0.0 < epsilon < bound:
        raise EpsilonOutOfRange(f"epsilon={epsilon!r} outside (0, {bound!r})")
    E = empirical_loss(loss, dist)
    slope_eps = epsilon / delta
    comps = []
    if r == 1.0 or E == 0.0:
        regime = "r1" if r == 1.0 else "rgt1_case2"
        for z in dist.atoms:
            w = witness(loss, z, slope_eps, delta, lipschitz=L)
            d = eval_cost(loss.cost, w, z)
            eta = (delta / d) ** r
            if eta >= 1.0 - 1e-12:
                eta = 1.0
            comps.append(mix([point_mass(w), point_mass(z)], [eta, 1.0 - eta]))
    else:
        regime = "rgt1_case1"
        root = E ** (1.0 / r)
        for z in dist.atoms:
            target = eval_psi(loss, z) * delta / root
            comps.append(point_mass(witness(loss, z, slope_eps, delta, mode="B", target=target, lipschitz=L)))
    tilde = mix(comps, dist.weights)
    U = _u_formula(E, L, delta, r)
    if r == 1.0:
        eps_eff = epsilon
    else:
        eps_eff = U - (E ** (1.0 / r) + L * delta - epsilon) ** r
    achieved = empirical_loss(loss, tilde)
    radius = wasserstein_discrete(loss.cost, r, tilde, dist)
    return WorstCaseCertificate(tilde, achieved, radius, float(epsilon), regime, U, eps_eff, delta)


# ---------------------------------------------------------------------------
# risk measures


def _values(dist: DiscreteDistribution, g: Union[ScalarFn, LossSpec]) -> np.ndarray:
    f = (lambda z: eval_psi(g, z)) if isinstance(g, LossSpec) else g
    return np.array([float(f(z)) for z in dist.atoms])


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise AlphaOutOfRange(f"alpha={alpha!r} outside (0, 1)")


def cvar(dist: DiscreteDistribution, g: Union[ScalarFn, LossSpec], alpha: float) -> float:
    """Conditional value-at-risk ``inf_t t + E[(g - t)_+] / (1 - alpha)``.

    Evaluated in closed form at ``t`` equal to the alpha-quantile atom.

    Raises
    ------
    AlphaOutOfRange
    """
    _check_alpha(alpha)
    vals = _values(dist, g)
    order = np.argsort(vals, kind="stable")
    cum = np.cumsum(dist.weights[order])
    k = int(np.searchsorted(cum, alpha * (1.0 - 1e-12), side="left"))
    t = float(vals[order[min(k, len(vals) - 1)]])
    return t + float(dist.weights @ np.maximum(vals - t, 0.0)) / (1.0 - alpha)


def robust_cvar(loss_g: LossSpec, dist: DiscreteDistribution, alpha: float, delta: float) -> float:
    """``CVaR_alpha(G) + L_G delta / (1 - alpha)`` for the cataloged CVaR families.

    Raises
    ------
    UnsupportedPairing, AlphaOutOfRange
    """
    if loss_g.family not in (CVAR_ABS_RESIDUAL, CVAR_MARGIN):
        raise UnsupportedPairing(f"no robust CVaR identity for {loss_g.family}")
    _check_alpha(alpha)
    if alpha > ALPHA_MAX:
        raise AlphaOutOfRange("alpha too close to 1")
    L = weak_lipschitz(loss_g).constant
    return cvar(dist, loss_g, alpha) + L * delta / (1.0 - alpha)


def _hmcr_objective(vals: np.ndarray, w: np.ndarray, alpha: float, r: float, t: float) -> float:
    tail = np.maximum(vals - t, 0.0)
    m = float(w @ tail**r)
    return t + m ** (1.0 / r) / (1.0 - alpha)


def _hmcr_slope(vals: np.ndarray, w: np.ndarray, alpha: float, r: float, t: float) -> float:
    tail = np.maximum(vals - t, 0.0)
    if r == 1.0:
        return 1.0 - float(w @ (tail > 0)) / (1.0 - alpha)
    m = float(w @ tail**r)
    if m == 0.0:
        return 1.0
    return 1.0 - m ** (1.0 / r - 1.0) * float(w @ tail ** (r - 1.0)) / (1.0 - alpha)


def hmcr(
    dist: DiscreteDistribution,
    g: Union[ScalarFn, LossSpec],
    alpha: float,
    r: float,
    delta: float,
    lipschitz: float | None = None,
) -> tuple[float, float]:
    """Higher-moment coherent risk and its robust counterpart.

    ``nominal = inf_t t + (E[(g - t)_+^r])^(1/r) / (1 - alpha)`` found by
    golden-section search; ``robust = nominal + L_G delta / (1 - alpha)``.
    ``L_G`` comes from ``g`` when it is a :class:`LossSpec`, otherwise from
    ``lipschitz``.

    Raises
    ------
    AlphaOutOfRange
    """
    _check_alpha(alpha)
    if r < 1.0:
        raise ValueError("r must be at least 1")
    vals = _values(dist, g)
    if lipschitz is None:
        if isinstance(g, LossSpec):
            lipschitz = weak_lipschitz(g).constant
        elif delta > 0:
            raise ValueError("a Lipschitz constant is needed for the robust value")
        else:
            lipschitz = 0.0
    _, nominal = hmcr_threshold(vals, dist.weights, alpha, r)
    return nominal, nominal + lipschitz * delta / (1.0 - alpha)


def hmcr_threshold(vals: np.ndarray, w: np.ndarray, alpha: float, r: float) -> tuple[float, float]:
    """Minimizer ``t*`` and minimum of ``t + (E[(g - t)_+^r])^(1/r) / (1 - alpha)``.

    Golden-section search on ``[min g - 1, max g]``; the lower end is pushed
    down by doubling until the slope there is negative.
    """
    vals = np.asarray(vals, dtype=float)
    lo, hi = float(vals.min()) - 1.0, float(vals.max())
    width = 1.0
    for _ in range(200):
        if _hmcr_slope(vals, w, alpha, r, lo) < 0.0:
            break
        width *= 2.0
        lo = float(vals.min()) - width
    f = lambda t: _hmcr_objective(vals, w, alpha, r, t)  # noqa: E731
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > 1e-10 * (1.0 + abs(a) + abs(b)) * 0.5:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    cands = [(fc, c), (fd, d), (f(0.5 * (a + b)), 0.5 * (a + b)), (f(hi), hi)]
    if r == 1.0:
        # the minimum sits at an atom; evaluate the nearby atoms exactly
        cands += [(f(float(v)), float(v)) for v in vals]
    val, t = min(cands)
    return t, val
