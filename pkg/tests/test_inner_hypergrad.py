"""Lower-level solver certificates and the implicit gradient."""

import numpy as np
import pytest

from dpbilevel.errors import ConfigurationError, NonConvergenceError
from dpbilevel.hypergrad import approx_hypergradient, finite_diff_phi_gradient
from dpbilevel.inner import evaluate_phi_inexact, phi_solution_pair, solve_lower_level
from dpbilevel.instances import make_instance
from dpbilevel.problem import derive_constants
from dpbilevel.rng import make_generator


@pytest.fixture(scope="module")
def quad():
    fx = make_instance("quadratic", d_x=2, d_y=3, seed=0)
    return fx, fx.sample_dataset(12, seed=1)


@pytest.fixture(scope="module")
def ridge():
    fx = make_instance("ridge", feature_dim=2, seed=0)
    return fx, fx.sample_dataset(24, seed=2)


def random_x(fx, rng):
    return fx.problem.domain_x.project(
        rng.normal(size=fx.problem.d_x) * 0.4 * fx.constants.D_x
        + fx.problem.domain_x.center)


# ---------------------------------------------------------------------------
# inner solver
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [1e-2, 1e-5, 1e-8])
def test_certificate_bounds_true_distance(quad, alpha):
    fx, Z = quad
    rng = make_generator(10)
    for _ in range(5):
        x = random_x(fx, rng)
        res = solve_lower_level(fx.problem, Z, x, alpha, fx.constants)
        y_true = fx.y_star(x, Z)
        assert res.certified_error <= alpha
        assert np.linalg.norm(res.y - y_true) <= res.certified_error + 1e-12


def test_warm_start_skips_iterations(quad):
    fx, Z = quad
    x = np.array([0.3, -0.2])
    cold = solve_lower_level(fx.problem, Z, x, 1e-7, fx.constants)
    warm = solve_lower_level(fx.problem, Z, x, 1e-7, fx.constants,
                             warm_start=cold.y)
    assert warm.iterations == 0
    np.testing.assert_array_equal(warm.y, cold.y)


def test_budget_exhaustion_raises(quad):
    fx, Z = quad
    with pytest.raises(NonConvergenceError):
        solve_lower_level(fx.problem, Z, np.array([0.9, 0.1]), 1e-12,
                          fx.constants, max_iters=0)


def test_alpha_must_be_positive(quad):
    fx, Z = quad
    with pytest.raises(ConfigurationError):
        solve_lower_level(fx.problem, Z, np.zeros(2), 0.0, fx.constants)


def test_phi_evaluation_within_declared_error(quad):
    fx, Z = quad
    rng = make_generator(3)
    for zeta in (1e-2, 1e-4, 1e-6):
        x = random_x(fx, rng)
        approx = evaluate_phi_inexact(fx.problem, Z, x, zeta, fx.constants)
        assert abs(approx - fx.phi(x, Z)) <= zeta


def test_phi_solution_pair_returns_consistent_pair(ridge):
    fx, Z = ridge
    x = np.array([0.5, -1.0])
    value, y = phi_solution_pair(fx.problem, Z, x, 1e-6, fx.constants)
    # the returned value is f evaluated at the returned (tight) solution
    from dpbilevel.problem import dataset_mean
    assert value == pytest.approx(dataset_mean(fx.problem, "f_eval", x, y, Z))


# ---------------------------------------------------------------------------
# hypergradient
# ---------------------------------------------------------------------------

def test_exact_at_lower_level_solution(quad):
    fx, Z = quad
    rng = make_generator(8)
    for _ in range(10):
        x = random_x(fx, rng)
        hg = approx_hypergradient(fx.problem, Z, x, fx.y_star(x, Z))
        np.testing.assert_allclose(hg.vector, fx.grad_phi(x, Z),
                                   rtol=1e-9, atol=1e-12)
        assert hg.linear_solve_residual < 1e-8


def test_matches_finite_differences_ridge(ridge):
    fx, Z = ridge
    rng = make_generator(12)
    for _ in range(5):
        x = random_x(fx, rng)
        res = solve_lower_level(fx.problem, Z, x, 1e-10, fx.constants)
        hg = approx_hypergradient(fx.problem, Z, x, res.y).vector
        fd = finite_diff_phi_gradient(fx.problem, Z, x, 1e-5, 1e-10, fx.constants)
        scale = max(np.linalg.norm(fd), 1e-8)
        assert np.linalg.norm(hg - fd) / scale < 1e-3


def test_bias_linear_in_inner_error(quad):
    # perturbing y away from y* moves the estimate by at most C * ||dy||;
    # the quadratic fixture has C = 0 (constant Hessians, linear-in-y f),
    # so the estimate must not move at all
    fx, Z = quad
    C = derive_constants(fx.constants, Z.n).C
    assert C == 0.0
    x = np.array([0.2, 0.6])
    y_true = fx.y_star(x, Z)
    base = approx_hypergradient(fx.problem, Z, x, y_true).vector
    rng = make_generator(4)
    for r in (1e-1, 1e-2, 1e-3):
        dy = rng.normal(size=y_true.size)
        dy *= r / np.linalg.norm(dy)
        moved = approx_hypergradient(fx.problem, Z, x, y_true + dy).vector
        assert np.linalg.norm(moved - base) <= C * r + 1e-12


def test_bias_bound_on_ridge(ridge):
    # ridge has genuinely y-dependent Hessians, so C > 0 and the sweep bites
    fx, Z = ridge
    C = derive_constants(fx.constants, Z.n).C
    assert C > 0
    rng = make_generator(5)
    x = np.array([1.0, -0.5])
    y_true = solve_lower_level(fx.problem, Z, x, 1e-12, fx.constants).y
    base = approx_hypergradient(fx.problem, Z, x, y_true).vector
    for r in (1e-1, 1e-2, 1e-3):
        for _ in range(5):
            dy = rng.normal(size=y_true.size)
            dy *= r / np.linalg.norm(dy)
            y = fx.problem.y_box.project(y_true + dy)
            moved = approx_hypergradient(fx.problem, Z, x, y).vector
            shift = np.linalg.norm(y - y_true)
            assert np.linalg.norm(moved - base) <= C * shift + 1e-10
