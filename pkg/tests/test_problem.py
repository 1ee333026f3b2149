"""Domains, datasets, declared constants, and the derived closed forms."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpbilevel.errors import ConfigurationError
from dpbilevel.problem import AssumptionConstants, Dataset, Domain, derive_constants


def all_ones(**overrides):
    base = dict(
        L_fx=1.0, L_fy=1.0, mu_g=1.0, L_gy=1.0,
        beta_fyy=1.0, beta_fxx=1.0, beta_fxy=1.0,
        beta_gxy=1.0, beta_gyy=1.0,
        M_gxy=1.0, M_gyy=1.0, C_gxy=1.0, C_gyy=1.0,
        D_x=1.0, D_y=1.0,
    )
    base.update(overrides)
    return AssumptionConstants(**base)


# ---------------------------------------------------------------------------
# derived constants: hand-substituted values
# ---------------------------------------------------------------------------

def test_derived_constants_all_ones_n10():
    der = derive_constants(all_ones(), n=10)
    assert der.s == pytest.approx(4.4, rel=1e-15)
    assert der.L_bar == 2.0
    assert der.C == 4.0
    assert der.K == 18.0
    assert der.beta_phi == 8.0
    assert der.G == 3.0
    assert der.Psi == 3.0


def test_derived_constants_mu2_small_domains():
    a = all_ones(mu_g=2.0, D_x=0.5, D_y=0.5)
    der = derive_constants(a, n=4)
    assert der.s == pytest.approx(0.5 * (0.5 + 0.5) + 4.0 * 1.0 / 2.0, rel=1e-15)
    assert der.s == pytest.approx(2.5, rel=1e-15)


def test_derive_constants_rejects_bad_n():
    with pytest.raises(ConfigurationError):
        derive_constants(all_ones(), n=0)


@given(c=st.floats(min_value=0.1, max_value=10.0))
@settings(max_examples=30, deadline=None)
def test_scale_covariance(c):
    # s, L_bar, Psi are degree-1 in the upper objective's gradient bounds;
    # G is degree-1 in (L_fx, L_fy, L_gy) jointly
    base = derive_constants(all_ones(), n=7)
    f_scaled = derive_constants(all_ones(L_fx=c, L_fy=c), n=7)
    assert f_scaled.s == pytest.approx(c * base.s, rel=1e-12)
    assert f_scaled.L_bar == pytest.approx(c * base.L_bar, rel=1e-12)
    assert f_scaled.Psi == pytest.approx(c * base.Psi, rel=1e-12)
    all_scaled = derive_constants(
        all_ones(L_fx=c, L_fy=c, L_gy=c, D_y=min(1.0, c)), n=7)
    assert all_scaled.G == pytest.approx(c * base.G, rel=1e-12)


def test_assumption_constants_validation():
    with pytest.raises(ConfigurationError):
        all_ones(mu_g=0.0)
    with pytest.raises(ConfigurationError):
        all_ones(L_fy=-1.0)
    # reachable-solution bound: D_y cannot exceed L_gy / mu_g
    with pytest.raises(ConfigurationError):
        all_ones(D_y=3.0)


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

def test_ball_projection_and_gauge():
    dom = Domain("ball", np.zeros(2), radius=2.0)
    np.testing.assert_allclose(dom.project(np.array([6.0, 8.0])),
                               np.array([1.2, 1.6]))
    assert dom.gauge(np.array([1.0, 0.0])) == 0.5
    assert dom.contains(np.array([2.0, 0.0]))
    assert not dom.contains(np.array([2.0001, 0.0]))
    assert dom.diameter == 4.0
    assert dom.inf_width == 4.0


def test_box_projection_distance():
    dom = Domain("box", np.array([1.0, -1.0]), half_widths=np.array([1.0, 0.5]))
    assert dom.distance(np.array([3.0, -1.0])) == pytest.approx(1.0)
    assert dom.max_norm() == pytest.approx(math.hypot(2.0, 1.5))
    assert dom.gauge_lip2() == pytest.approx(2.0)


@given(st.integers(min_value=1, max_value=5), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_projection_idempotent_nonexpansive(d, seed):
    rng = np.random.default_rng(seed)
    dom = Domain("ball", rng.normal(size=d), radius=float(rng.uniform(0.1, 3.0)))
    x = rng.normal(size=d) * 4.0
    y = rng.normal(size=d) * 4.0
    px, py = dom.project(x), dom.project(y)
    np.testing.assert_allclose(dom.project(px), px, atol=1e-12)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12


def test_unknown_domain_kind():
    with pytest.raises(ConfigurationError):
        Domain("simplex", np.zeros(2))


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def test_dataset_replaced_is_adjacent():
    Z = Dataset(np.arange(6.0).reshape(3, 2))
    Z2 = Z.replaced(1, np.array([9.0, 9.0]))
    assert Z.n == Z2.n == 3
    np.testing.assert_array_equal(Z.points[1], [2.0, 3.0])  # original untouched
    np.testing.assert_array_equal(Z2.points[1], [9.0, 9.0])
    diff = np.any(Z.points != Z2.points, axis=1)
    assert diff.sum() == 1


def test_dataset_1d_records_get_a_column():
    Z = Dataset(np.array([1.0, -1.0, 1.0]))
    assert Z.points.shape == (3, 1)


def test_empty_dataset_rejected():
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros((0, 2)))
