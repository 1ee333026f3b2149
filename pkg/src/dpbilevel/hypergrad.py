"""Second-order implicit gradient of the upper-level objective.

At a point (x, y) the estimate is

    grad_f_x  -  H_xy @ H_yy^{-1} @ grad_f_y        (all record-averaged)

which equals the true gradient of Phi-hat when y is the exact lower-level
minimizer, and is biased by at most C * ||y - y*|| otherwise (C from
derive_constants).  H_yy is SPD by strong convexity, so the linear solve uses
a Cholesky factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import AssumptionViolationError, ConfigurationError
from .inner import evaluate_phi_inexact
from .problem import AssumptionConstants, BilevelProblem, Dataset, dataset_mean

#: the linear solve must reach this relative residual (contract checked in tests)
SOLVE_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class Hypergradient:
    vector: np.ndarray
    linear_solve_residual: float


def approx_hypergradient(
    p: BilevelProblem, Z: Dataset, x: np.ndarray, y: np.ndarray
) -> Hypergradient:
    """Implicit-gradient estimate at (x, y), exact at y = y*(x)."""
    gx = dataset_mean(p, "grad_f_x", x, y, Z)
    gy = dataset_mean(p, "grad_f_y", x, y, Z)
    Hxy = dataset_mean(p, "hess_g_xy", x, y, Z)
    Hyy = dataset_mean(p, "hess_g_yy", x, y, Z)
    Hyy = 0.5 * (Hyy + Hyy.T)
    try:
        factor = scipy.linalg.cho_factor(Hyy)
        w = scipy.linalg.cho_solve(factor, gy)
    except scipy.linalg.LinAlgError as exc:
        raise AssumptionViolationError(
            "averaged hess_g_yy is not positive definite"
        ) from exc
    residual = float(np.linalg.norm(Hyy @ w - gy))
    return Hypergradient(vector=gx - Hxy @ w, linear_solve_residual=residual)


def finite_diff_phi_gradient(
    p: BilevelProblem,
    Z: Dataset,
    x: np.ndarray,
    h: float,
    zeta: float,
    a: AssumptionConstants,
) -> np.ndarray:
    """Central finite differences of the inexactly evaluated objective.

    Requires zeta <= h^2 so the evaluation error cannot dominate the
    quotient (error is O(h^2 + zeta/h)).
    """
    if h <= 0:
        raise ConfigurationError("h must be positive")
    if not (0 < zeta <= h * h):
        raise ConfigurationError("need 0 < zeta <= h^2 for a meaningful quotient")
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        up = evaluate_phi_inexact(p, Z, x + e, zeta, a)
        dn = evaluate_phi_inexact(p, Z, x - e, zeta, a)
        grad[i] = (up - dn) / (2.0 * h)
    return grad
