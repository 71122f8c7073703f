import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbmlab import kernel as kn

from oracles import cell_integral_qaws, kernel_qaws, kernel_trapezoid

H_VALUES = [0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9]
hursts = st.floats(min_value=0.02, max_value=0.98)
times = st.floats(min_value=1e-3, max_value=4.0)

# Frozen output of the trapezoid oracle in tests/oracles.py (10^6 points).
K_075_1_05 = 0.937591963698065


# --- types -----------------------------------------------------------------


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_hurst_rejects_boundary_and_outside(bad):
    with pytest.raises(ValueError):
        kn.HurstParameter(bad)


def test_hurst_regime_is_exact():
    assert kn.HurstParameter(0.5).regime == "half"
    assert kn.HurstParameter(0.5 - 1e-16).regime == "sub"
    assert kn.HurstParameter(np.nextafter(0.5, 1)).regime == "super"
    assert kn.HurstParameter(0.5).is_half


@pytest.mark.parametrize("kw", [{"rel_tol": 0}, {"abs_tol": -1}, {"max_subdivisions": 3},
                                {"singularity_split": 0.5}, {"singularity_split": 0.0}])
def test_quadrature_config_validation(kw):
    with pytest.raises(ValueError):
        kn.QuadratureConfig(**kw)


def test_time_grid_uniform_and_monotone():
    g = kn.TimeGrid(3.0, 7)
    assert g.points[0] == 0 and g.points[-1] == 3.0
    assert np.all(np.diff(g.points) > 0)
    assert np.allclose(np.diff(g.points), 3.0 / 7, rtol=0, atol=4 * np.finfo(float).eps)
    assert g.spacing == 3.0 / 7


@pytest.mark.parametrize("args", [(0.0, 4), (1.0, 0), (1.0, 2.5), (-1.0, 3)])
def test_time_grid_rejects_bad(args):
    with pytest.raises(ValueError):
        kn.TimeGrid(*args)


def test_time_grid_from_points_and_geometric():
    g = kn.TimeGrid.from_points([0.0, 0.1, 0.5, 2.0])
    assert not g.uniform and g.horizon == 2.0 and g.n_cells == 3
    with pytest.raises(ValueError):
        kn.TimeGrid.from_points([0.0, 0.5, 0.5, 1.0])
    with pytest.raises(ValueError):
        kn.TimeGrid.from_points([0.1, 0.5])
    geo = kn.TimeGrid.geometric(1e-6, 1.0, per_octave=4)
    r = geo.points[2:] / geo.points[1:-1]
    assert np.allclose(r, r[0])


# --- kernel ----------------------------------------------------------------


def test_kernel_eval_half_is_one():
    assert kn.kernel_eval(0.5, 1.0, 0.3) == 1.0


@pytest.mark.parametrize("H", [0.3, 0.5, 0.75])
@pytest.mark.parametrize("t,s", [(1.0, 1.0), (1.0, 1.5), (1.0, 0.0), (1.0, -0.2)])
def test_kernel_eval_domain(H, t, s):
    with pytest.raises(ValueError):
        kn.kernel_eval(H, t, s)


def test_kernel_eval_matches_trapezoid_oracle():
    oracle = kernel_trapezoid(0.75, 1.0, 0.5)
    assert oracle == pytest.approx(K_075_1_05, rel=1e-12)
    assert kn.kernel_eval(0.75, 1.0, 0.5) == pytest.approx(oracle, rel=1e-7)


@pytest.mark.parametrize("H", H_VALUES)
@pytest.mark.parametrize("s", [1e-6, 0.01, 0.3, 0.77, 0.999])
def test_kernel_forms_agree(H, s):
    t = 1.7
    ref = kernel_qaws(H, t, s)
    assert kn.kernel_eval(H, t, s) == pytest.approx(ref, rel=1e-8)
    assert kn.kernel(H, t, s) == pytest.approx(ref, rel=1e-11)


def test_kernel_vectorized_support():
    v = kn.kernel(0.3, np.array([1.0, 1.0, 1.0, 1.0]), np.array([0.0, 0.5, 1.0, 2.0]))
    assert v[0] == 0 and v[2] == 0 and v[3] == 0 and v[1] > 0


@given(H=hursts, t=times, x=st.floats(min_value=1e-6, max_value=1 - 1e-6))
@settings(max_examples=60, deadline=None)
def test_kernel_nonnegative(H, t, x):
    assert kn.kernel(H, t, t * x) >= 0


def test_kernel_eval_reports_quadrature_failure():
    q = kn.QuadratureConfig(rel_tol=1e-15, abs_tol=1e-300, max_subdivisions=4)
    with pytest.raises(kn.QuadratureError):
        kn.kernel_eval(0.3, 1.0, 0.5, q)


# --- upper bound -----------------------------------------------------------


def test_kernel_upper_bound_examples():
    assert kn.kernel_upper_bound(0.5, 2.0, 0.7, 3.2) == 3.2
    assert kn.kernel_upper_bound(0.75, 1.0, 0.25, 1.0) == pytest.approx(1.41421356, rel=1e-8)
    assert kn.kernel_upper_bound(0.25, 1.0, 0.5, 1.0) == pytest.approx(math.sqrt(2), rel=1e-14)
    with pytest.raises(ValueError):
        kn.kernel_upper_bound(0.3, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        kn.kernel_upper_bound(0.3, 1.0, 0.5, 0.0)


@pytest.mark.parametrize("H", [0.1, 0.25, 0.4, 0.6, 0.75, 0.9])
def test_kernel_below_estimated_bound(H):
    c_hat = kn.estimate_kernel_constant(H, horizon=2.0)
    rng = np.random.default_rng(1)
    t = 2.0 * (1 - rng.random(300))
    s = t * np.clip(rng.random(300), 1e-9, 1 - 1e-9)
    ratio = [kn.kernel(H, a, b) / kn.kernel_upper_bound(H, a, b, c_hat) for a, b in zip(t, s)]
    assert max(ratio) <= 1 + 1e-9
    # the bound shape is tight somewhere: the scan constant is not inflated
    assert max(ratio) > 0.5


# --- covariance ------------------------------------------------------------


@given(H=hursts, t=times)
def test_covariance_diagonal(H, t):
    assert kn.covariance(H, t, t) == pytest.approx(t ** (2 * H), rel=1e-14)


@given(H=hursts, t=times, s=times)
def test_covariance_symmetric(H, t, s):
    assert kn.covariance(H, t, s) == kn.covariance(H, s, t)


@given(t=times, s=times)
def test_covariance_half_is_min(t, s):
    assert kn.covariance(0.5, t, s) == pytest.approx(min(t, s), rel=1e-13, abs=1e-15)


def test_covariance_examples():
    assert kn.covariance(0.75, 2.0, 1.0) == pytest.approx(math.sqrt(2), rel=1e-12)
    with pytest.raises(ValueError):
        kn.covariance(0.3, -1.0, 1.0)
    R = kn.covariance_matrix(0.3, [0.5, 1.0])
    assert R.shape == (2, 2) and R[0, 1] == R[1, 0]


def test_kernel_l2_inner_examples():
    assert kn.kernel_l2_inner(0.5, 2.0, 3.0) == 2.0
    for H in H_VALUES:
        assert kn.kernel_l2_inner(H, 1.0, 1.0) == pytest.approx(1.0, rel=1e-9)
    assert kn.kernel_l2_inner(0.25, 1.0, 0.5) == pytest.approx(kn.covariance(0.25, 1.0, 0.5), rel=1e-6)
    with pytest.raises(ValueError):
        kn.kernel_l2_inner(0.3, 0.0, 1.0)


@given(H=hursts, t=st.floats(min_value=0.01, max_value=4.0), u=st.floats(min_value=0.01, max_value=4.0))
@settings(max_examples=40, deadline=None)
def test_kernel_l2_identity_property(H, t, u):
    R = kn.covariance(H, t, u)
    assert abs(kn.kernel_l2_inner(H, t, u) - R) / (1 + abs(R)) <= 1e-6


# --- fGn autocovariance and increment covariance ---------------------------


def test_fgn_autocov_examples():
    assert kn.fgn_autocov(0.5, 3) == 0.0
    assert kn.fgn_autocov(0.3, 1) == pytest.approx(0.5 * (2 ** 0.6 - 2), rel=1e-14)
    assert kn.fgn_autocov(0.3, 1) == pytest.approx(-0.242142, abs=1e-6)
    with pytest.raises(ValueError):
        kn.fgn_autocov(0.3, 0.5)


@given(H=hursts, lag=st.floats(min_value=1.0, max_value=64.0))
def test_fgn_autocov_sign(H, lag):
    g = kn.fgn_autocov(H, lag)
    if H < 0.5:
        assert g <= 1e-15
    elif H > 0.5:
        assert g >= -1e-15


@given(H=hursts, lag=st.integers(min_value=1, max_value=64))
def test_fgn_autocov_bounded_by_derived_constant(H, lag):
    # the derived |2^{2H-1} - 1| bound on correlations of unit increments
    assert abs(kn.fgn_autocov(H, lag)) <= abs(2 ** (2 * H - 1) - 1) + 1e-15


def test_increment_covariance_examples():
    assert kn.increment_covariance(0.5, 0.0, 1.0, 2.0, 3.0) == 0.0
    H, (u, r, s, t) = 0.25, (0.0, 1.0, 2.0, 3.0)
    R = lambda a, b: kn.covariance(H, a, b)
    brute = (R(t, r) - R(t, u) - R(s, r) + R(s, u)) / ((t - s) ** H * (r - u) ** H)
    assert kn.increment_covariance(H, u, r, s, t) == pytest.approx(brute, rel=1e-12)
    with pytest.raises(ValueError):
        kn.increment_covariance(0.3, 1.0, 0.5, 2.0, 3.0)


@given(H=hursts, pts=st.lists(st.floats(min_value=0.0, max_value=4.0), min_size=4, max_size=4, unique=True))
def test_increment_covariance_sign_and_range(H, pts):
    u, r, s, t = sorted(pts)
    if min(r - u, s - r, t - s) < 1e-6:
        return
    v = kn.increment_covariance(H, u, r, s, t)
    assert -1 - 1e-12 <= v <= 1 + 1e-12
    if H < 0.5:
        assert v <= 1e-12
    elif H > 0.5:
        assert v >= -1e-12


# --- primitives and cell integrals -----------------------------------------


@pytest.mark.parametrize("H", [0.1, 0.3, 0.45, 0.55, 0.75, 0.95])
def test_primitive_matches_oracle(H):
    for x in (1e-12, 1e-5, 0.1, 0.4999, 0.5, 0.73, 1 - 1e-9, 1.0):
        ref = cell_integral_qaws(H, 1.0, 0.0, x)
        assert kn.primitive(H, x) == pytest.approx(ref, rel=1e-9, abs=1e-15)
    for z in (2.0 ** -40, 2.0 ** -10, 0.125, 0.5, 0.75, 1.0):  # 1 - z exact
        ref = cell_integral_qaws(H, 1.0, 1.0 - z, 1.0)
        assert kn.primitive_complement(H, z) == pytest.approx(ref, rel=1e-9)


def test_primitive_domain_and_half():
    assert kn.primitive(0.5, 0.3) == 0.3
    with pytest.raises(ValueError):
        kn.primitive(0.3, 1.2)
    with pytest.raises(ValueError):
        kn.primitive_complement(0.3, -0.1)


@pytest.mark.parametrize("H", [0.2, 0.4, 0.6, 0.8])
def test_cell_integrals_match_oracle(H):
    t = 1.3
    edges = np.array([0.0, 0.01, 0.4, 0.65, 0.9, 1.29, 1.3])
    got = kn.cell_integrals(H, t, edges[:-1], edges[1:])
    ref = [cell_integral_qaws(H, t, a, b) for a, b in zip(edges[:-1], edges[1:])]
    assert np.allclose(got, ref, rtol=1e-11, atol=0)


def test_integrate_singular_power_law():
    q = kn.QuadratureConfig()
    f = lambda x: x ** -0.7 * (2 - x) ** -0.4
    from scipy import integrate

    ref = integrate.quad(lambda x: 1.0, 0, 2, weight="alg", wvar=(-0.7, -0.4))[0]
    assert kn.integrate_singular(f, 0.0, 2.0, -0.7, -0.4, q) == pytest.approx(ref, rel=1e-9)
    assert kn.integrate_singular(f, 1.0, 1.0, 0, 0, q) == 0.0
