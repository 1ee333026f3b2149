"""Certified solver for the strongly convex lower level.

Full-batch gradient descent with fixed step 1/beta_gyy.  Strong convexity
turns the final gradient norm into a distance certificate:
||y - y*|| <= ||grad||/mu_g, so the returned accuracy is a guarantee, not an
estimate.  Everything is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NonConvergenceError
from .problem import AssumptionConstants, BilevelProblem, Dataset, dataset_mean


@dataclass(frozen=True)
class InnerSolveResult:
    y: np.ndarray
    certified_error: float
    iterations: int
    grad_norm: float


def default_max_iters(a: AssumptionConstants, y_box, alpha: float) -> int:
    """Iteration budget from the linear convergence rate, plus slack."""
    if alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    kappa = a.beta_gyy / a.mu_g
    arg = a.beta_gyy * y_box.diameter / (a.mu_g * alpha)
    log_term = math.log(arg) if arg > 1.0 else 0.0
    return int(math.ceil(kappa * log_term)) + 16


def solve_lower_level(
    p: BilevelProblem,
    Z: Dataset,
    x: np.ndarray,
    alpha: float,
    a: AssumptionConstants,
    warm_start: np.ndarray | None = None,
    max_iters: int | None = None,
) -> InnerSolveResult:
    """Run GD on the averaged lower-level objective until ||y - y*|| <= alpha.

    Returns immediately if the warm start already certifies.  Raises
    NonConvergenceError when the budget is exhausted without a certificate.
    """
    if alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    if max_iters is None:
        max_iters = default_max_iters(a, p.y_box, alpha)
    step = 1.0 / a.beta_gyy
    y = np.array(p.y_box.center if warm_start is None else warm_start, dtype=float)
    iterations = 0
    while True:
        g = dataset_mean(p, "grad_g_y", x, y, Z)
        grad_norm = float(np.linalg.norm(g))
        certified = grad_norm / a.mu_g
        if certified <= alpha:
            return InnerSolveResult(y=y, certified_error=certified,
                                    iterations=iterations, grad_norm=grad_norm)
        if iterations >= max_iters:
            raise NonConvergenceError(
                f"lower-level solve: certificate {certified:.3e} > alpha {alpha:.3e} "
                f"after {iterations} iterations"
            )
        y = y - step * g
        iterations += 1


def evaluate_phi_inexact(
    p: BilevelProblem,
    Z: Dataset,
    x: np.ndarray,
    zeta: float,
    a: AssumptionConstants,
    warm_start: np.ndarray | None = None,
) -> float:
    """Value of the implicit objective at x with additive error at most zeta.

    Solves the lower level to alpha = zeta / L_fy (f's y-Lipschitz constant
    converts the distance certificate into a value error bound) and averages f.
    When L_fy = 0 the upper level does not depend on y and any feasible y is
    exact.
    """
    if zeta <= 0:
        raise ConfigurationError("zeta must be positive")
    if a.L_fy > 0:
        alpha = zeta / a.L_fy
        res = solve_lower_level(p, Z, x, alpha, a, warm_start=warm_start)
        y = res.y
    else:
        y = p.y_box.center
    return float(dataset_mean(p, "f_eval", x, y, Z))


def phi_solution_pair(
    p: BilevelProblem,
    Z: Dataset,
    x: np.ndarray,
    zeta: float,
    a: AssumptionConstants,
    warm_start: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Like evaluate_phi_inexact, also returning the certified y (for warm chains)."""
    if zeta <= 0:
        raise ConfigurationError("zeta must be positive")
    if a.L_fy > 0:
        res = solve_lower_level(p, Z, x, zeta / a.L_fy, a, warm_start=warm_start)
        y = res.y
    else:
        y = np.array(p.y_box.center, dtype=float)
    return float(dataset_mean(p, "f_eval", x, y, Z)), y
