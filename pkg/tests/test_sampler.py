"""End-to-end law checks for the inexact log-concave sampler."""

import math

import numpy as np
import pytest
import scipy.integrate
import scipy.special
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from dpbilevel.errors import ConfigurationError, SamplerFailure, SizeCapError
from dpbilevel.gridwalk.evaluator import Evaluator
from dpbilevel.gridwalk.sampler import (
    ENUM_STATE_CAP,
    grid_law,
    extend_to_cube,
    plan_sampler,
    sample_logconcave,
    sample_logconcave_detailed,
)
from dpbilevel.problem import Domain


def box(d, half=0.5):
    return Domain("box", np.zeros(d), half_widths=np.full(d, half))


def abs_evaluator(scale, zeta=0.0, perturb=None):
    def eval_one(theta):
        f = scale * float(np.abs(theta).sum())
        if perturb is not None:
            f += perturb(theta)
        return f

    eval_many = None
    if perturb is None:
        def eval_many(thetas):
            return scale * np.abs(thetas).sum(axis=1)

    return Evaluator(eval=eval_one, zeta_bound=zeta, alpha_lip=scale,
                     eval_many=eval_many)


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

def test_plan_short_cube_when_score_is_nearly_flat():
    plan = plan_sampler(box(1, half=0.25), alpha_lip=1.0, xi=0.5, zeta=0.0)
    assert plan.branch == "short_cube"
    assert plan.grid is None and plan.walk_steps == 0


def test_plan_enumerates_small_grids():
    plan = plan_sampler(box(1), alpha_lip=4.0, xi=0.5, zeta=0.0)
    assert plan.branch == "enumerate"
    assert plan.grid.cells_per_axis == 32  # spacing (xi/2)/(2*4*sqrt(1))
    assert plan.walk_steps == 0


def test_plan_walks_above_enumeration_cap():
    plan = plan_sampler(box(2), alpha_lip=2.0, xi=0.02, zeta=0.0)
    assert plan.branch == "walk"
    assert plan.grid.state_count > ENUM_STATE_CAP
    assert plan.walk_steps >= 1


def test_plan_walk_budget_grows_with_declared_error():
    quiet = plan_sampler(box(2), 2.0, 0.02, 0.0, force_walk=True)
    noisy = plan_sampler(box(2), 2.0, 0.02, 0.3, force_walk=True)
    assert noisy.walk_steps > quiet.walk_steps


def test_plan_coarse_fallback_keeps_enumeration_exact():
    # accuracy-sized grid would blow past the walk cap; the planner falls
    # back to the coarsest grid that still resolves the score
    plan = plan_sampler(box(2), alpha_lip=40.0, xi=0.02, zeta=0.0)
    assert plan.branch == "enumerate"
    assert plan.grid.cells_per_axis == 80  # ceil(2 * alpha * tau)


def test_plan_flat_score_single_cell():
    plan = plan_sampler(box(3), alpha_lip=0.0, xi=0.1, zeta=0.0)
    assert plan.branch == "enumerate"
    assert plan.grid.state_count == 1


def test_plan_infeasible_raises():
    with pytest.raises(SizeCapError):
        plan_sampler(box(3), alpha_lip=1000.0, xi=0.01, zeta=0.0)


def test_plan_argument_validation():
    with pytest.raises(ConfigurationError):
        plan_sampler(box(1), 1.0, 0.0, 0.0)
    with pytest.raises(ConfigurationError):
        plan_sampler(box(1), 1.0, 0.1, -0.1)


# ---------------------------------------------------------------------------
# cube extension
# ---------------------------------------------------------------------------

@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_extension_is_exact_on_the_body(seed):
    rng = np.random.default_rng(seed)
    domain = Domain("ball", np.zeros(2), radius=0.7)
    base = Evaluator(
        eval=lambda t: float(t @ t + 0.3 * t[0]),
        zeta_bound=0.0,
        alpha_lip=2.0,
    )
    ext = extend_to_cube(base, domain, L_lip2=2.0)
    theta = domain.sample_uniform(rng)
    assert ext.eval(theta) == pytest.approx(base.eval(theta), abs=1e-12)


def test_extension_penalizes_outside_points():
    domain = Domain("ball", np.zeros(2), radius=0.5)
    base = Evaluator(eval=lambda t: 0.0, zeta_bound=0.0, alpha_lip=0.0)
    ext = extend_to_cube(base, domain, L_lip2=1.0)
    corner = np.array([0.5, 0.5])
    assert ext.eval(corner) > ext.eval(np.zeros(2))


# ---------------------------------------------------------------------------
# sampled law
# ---------------------------------------------------------------------------

def test_grid_law_is_softmax_of_negated_scores():
    rng = np.random.default_rng(3)
    from dpbilevel.gridwalk.grid import grid_with_cells
    grid = grid_with_cells(box(1), 12)
    scores = rng.normal(size=12)
    ev = Evaluator(eval=lambda t: float(scores[grid.cell_of(t)]),
                   zeta_bound=0.0, alpha_lip=10.0)
    law = grid_law(ev, grid)
    np.testing.assert_allclose(law, scipy.special.softmax(-scores), rtol=1e-12)


def test_flat_score_draws_uniformly():
    domain = box(1)
    ev = Evaluator(eval=lambda t: 1.25, zeta_bound=0.0, alpha_lip=0.0)
    gen = np.random.default_rng(42)
    draws = np.array([
        sample_logconcave(ev, domain, L_lip2=0.0, xi=0.5, rng=gen)[0]
        for _ in range(10_000)
    ])
    counts, _ = np.histogram(draws, bins=8, range=(-0.5, 0.5))
    assert scipy.stats.chisquare(counts).pvalue > 0.01


def bin_masses(scale, grid, shift=0.0):
    """Exact probability of each grid cell under exp(-scale*|t|+shift-law)."""
    edges = grid.cube_low[0] + grid.gamma * np.arange(grid.cells_per_axis + 1)
    masses = np.array([
        scipy.integrate.quad(lambda t: math.exp(-scale * abs(t)), a, b)[0]
        for a, b in zip(edges[:-1], edges[1:])
    ])
    return masses / masses.sum()


def test_double_exponential_law_close_in_log_ratio():
    domain = box(1)
    xi = 0.5
    ev = abs_evaluator(2.0)
    plan = plan_sampler(domain, 2.0, xi, 0.0)
    assert plan.branch == "enumerate" and plan.grid.cells_per_axis == 16
    gen = np.random.default_rng(99)
    draws = np.array([
        sample_logconcave_detailed(ev, domain, 2.0, xi, gen, plan=plan).theta[0]
        for _ in range(8_000)
    ])
    counts, _ = np.histogram(
        draws, bins=plan.grid.cells_per_axis, range=(-0.5, 0.5))
    emp = counts / counts.sum()
    target = bin_masses(2.0, plan.grid)
    assert counts.min() > 0
    worst = np.max(np.abs(np.log(emp) - np.log(target)))
    assert worst <= xi + 0.05


def test_perturbed_oracle_stays_within_declared_envelope():
    domain = box(1)
    xi, zeta = 0.5, 0.1
    ev = abs_evaluator(2.0, zeta=zeta,
                       perturb=lambda t: zeta * math.copysign(1.0, t[0]))
    plan = plan_sampler(domain, 2.0, xi, zeta)
    gen = np.random.default_rng(7)
    draws = np.array([
        sample_logconcave_detailed(ev, domain, 2.0, xi, gen, plan=plan).theta[0]
        for _ in range(8_000)
    ])
    counts, _ = np.histogram(
        draws, bins=plan.grid.cells_per_axis, range=(-0.5, 0.5))
    emp = counts / counts.sum()
    target = bin_masses(2.0, plan.grid)  # the *unperturbed* law
    assert counts.min() > 0
    worst = np.max(np.abs(np.log(emp) - np.log(target)))
    assert worst <= 2.0 * zeta + xi + 0.05


@pytest.mark.parametrize("engine", ["python", "auto"])
def test_walk_branch_matches_grid_law(engine):
    domain = box(1)
    ev = abs_evaluator(3.0)
    base_plan = plan_sampler(domain, 3.0, 0.4, 0.0, force_walk=True)
    # shrink the (deliberately conservative) step budget: the 8-cell chain
    # mixes in far fewer steps, and this keeps the frequency test quick
    from dataclasses import replace
    plan = replace(base_plan, walk_steps=1500)
    assert plan.branch == "walk"
    gen = np.random.default_rng(11)
    cells = np.array([
        sample_logconcave_detailed(
            ev, domain, 3.0, 0.4, gen, plan=plan,
            force_grid=True, engine=engine).cell
        for _ in range(800)
    ])
    ext = extend_to_cube(ev, domain, 3.0)
    law = grid_law(ext, plan.grid)
    counts = np.bincount(cells, minlength=plan.grid.state_count)
    assert scipy.stats.chisquare(counts, law * counts.sum()).pvalue > 0.01


def test_detail_fields_and_domain_membership():
    domain = Domain("ball", np.zeros(2), radius=0.5)
    ev = Evaluator(eval=lambda t: float(np.abs(t).sum()),
                   zeta_bound=0.0, alpha_lip=1.0,
                   eval_many=lambda ts: np.abs(ts).sum(axis=1))
    gen = np.random.default_rng(5)
    for _ in range(50):
        detail = sample_logconcave_detailed(ev, domain, 1.0, 1.0, gen)
        assert domain.contains(detail.theta)
        assert detail.restarts < 64
        assert detail.plan.branch == "enumerate"
        assert detail.cell is not None


def test_restart_cap_exhaustion_raises():
    domain = box(1, half=0.25)
    # spikes the score away from the cube center: the short-cube acceptance
    # test then rejects essentially every proposal.  The plan is pinned so
    # the spike's (untruthful) Lipschitz declaration stays in force.
    ev = Evaluator(
        eval=lambda t: 0.0 if abs(float(t[0])) < 1e-12 else 80.0,
        zeta_bound=0.0, alpha_lip=0.5,
    )
    plan = plan_sampler(domain, 0.5, 0.5, 0.0)
    assert plan.branch == "short_cube"
    with pytest.raises(SamplerFailure):
        sample_logconcave(ev, domain, L_lip2=0.5, xi=0.5,
                          rng=np.random.default_rng(0), restart_cap=8,
                          plan=plan)


def test_integer_seed_reproduces_draws():
    domain = box(1)
    ev = abs_evaluator(2.0)
    a = sample_logconcave(ev, domain, 2.0, 0.4, rng=1234)
    b = sample_logconcave(ev, domain, 2.0, 0.4, rng=1234)
    np.testing.assert_array_equal(a, b)
