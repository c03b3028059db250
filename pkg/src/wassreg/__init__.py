"""Wasserstein distributionally robust losses and their regularized forms.

The package evaluates worst-case expected losses over Wasserstein balls
around discrete distributions, compares them with closed-form regularized
counterparts and certifies the match with an exact discrete transport oracle.
"""

__version__ = "0.1.0"

from .costs import CostSpec, GroundNorm, cost_matrix, dual_achiever, dual_norm, eval_cost, norm_value
from .equivalence import (
    BoundsReport,
    WorstCaseCertificate,
    bounds_report,
    classify_regime,
    cvar,
    empirical_loss,
    hmcr,
    lower_bound_L,
    per_point_bounds,
    robust_cvar,
    upper_bound_U,
    worst_case_distribution,
)
from .losses import CATALOG, LipschitzCertificate, LossSpec, eval_loss, eval_psi, weak_lipschitz, witness
from .oracle import (
    BudgetedLpSolution,
    dual_bound_I,
    make_grid,
    solve_budgeted_lp,
    sup_over_grid,
    transport_simplex,
    wasserstein_coupling,
    wasserstein_discrete,
)
from .solver import SolveConfig, SolveResult, finite_difference_check, minimize_regularized
from .space import Coupling, DiscreteDistribution, Point, make_distribution, mix, point_mass, uniform
