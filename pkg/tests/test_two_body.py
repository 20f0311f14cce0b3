import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lattice_efimov.errors import DomainError
from lattice_efimov.torus import GridSpec, TorusVec, dispersion, wrap
from lattice_efimov.two_body import (
    WATSON_INTEGRAL,
    ModelParams,
    band_bottom,
    band_top,
    bound_state_energies,
    bound_state_energy,
    compute_mu0,
    determinant,
    determinant_on_grid,
    determinant_refined,
    determinant_values,
    pair_energy,
    pair_energy_rewrite,
    shifted_minimizer,
    threshold_slope,
    threshold_slope_candidates,
    two_body_oracle,
    two_body_oracle_dense,
    watson_integral,
)

angle = st.floats(-np.pi, np.pi)
momentum = st.tuples(angle, angle, angle)
gammas = st.floats(0.1, 10.0)


def test_mu0_matches_watson(mu0):
    assert abs(mu0 * WATSON_INTEGRAL - 1) < 1e-10
    assert abs(compute_mu0(1e-7) - 1 / WATSON_INTEGRAL) < 1e-6


@pytest.mark.filterwarnings("ignore::lattice_efimov.errors.ConvergenceWarning")
def test_mu0_successive_levels_agree():
    coarse = watson_integral(1e-14, n_max=64)
    fine = watson_integral(1e-14, n_max=128)
    assert abs(1 / coarse.value - 1 / fine.value) < 1e-6
    # the raw midpoint values carry an O(h) error and do not agree this well
    assert abs(fine.raw_values[-1] - fine.raw_values[-2]) > 1e-4


def test_params_constants(p1):
    assert p1.v_gamma == pytest.approx(2 * p1.mu0)
    assert p1.u_gamma == pytest.approx(2 / math.sqrt(3))
    assert p1.s_gamma == 0.5
    assert p1.n_gamma == 1.5 and p1.M_gamma == 3.0
    assert p1.D_gamma == pytest.approx(2**1.5 / (2 * math.pi**2))
    with pytest.raises(DomainError):
        ModelParams(-1.0, 2.0)


@given(gammas)
def test_params_invariants(g):
    p = ModelParams(g, 1.978)
    assert 0 < p.s_gamma < 1 and p.u_gamma > 1 and 1 < p.n_gamma < 2


def test_band_bottom_examples(p1, params_for):
    for g in (0.5, 1.0, 3.0):
        assert band_bottom(np.zeros(3), params_for(g)) == 0.0
    assert band_bottom([np.pi] * 3, p1) == pytest.approx(6.0)
    k = np.array([1e-2, -2e-2, 5e-3])
    for g in (0.5, 1.0, 2.0):
        p = params_for(g)
        lead = g / (2 * (1 + g)) * (k @ k)
        assert abs(band_bottom(k, p) - lead) < (k @ k) ** 2


def test_band_edges_match_grid_scan(params_for, rng):
    t = np.linspace(-np.pi, np.pi, 161)
    q = np.stack(np.meshgrid(t, t, t, indexing="ij"), -1).reshape(-1, 3)
    for g in (0.5, 1.0, 2.0):
        p = params_for(g)
        for k in rng.uniform(-np.pi, np.pi, (3, 3)):
            e = pair_energy(k, q, p)
            qmin = np.asarray(shifted_minimizer(k, p))
            assert band_bottom(k, p) <= e.min() + 1e-12
            assert abs(pair_energy(k, qmin, p) - band_bottom(k, p)) < 1e-10
            assert band_top(k, p) >= e.max() - 1e-12
            assert e.max() > band_top(k, p) - 1e-2


def test_shifted_minimizer_examples(p1, params_for):
    assert shifted_minimizer(np.zeros(3), p1) == TorusVec.zero()
    assert np.allclose(np.asarray(shifted_minimizer([np.pi / 2, 0, 0], p1)), [np.pi / 4, 0, 0], atol=1e-14)
    k = np.array([1e-2, 2e-2, -1e-2])
    for g in (0.5, 2.0):
        p = params_for(g)
        approx = g / (1 + g) * k
        assert np.allclose(np.asarray(shifted_minimizer(k, p)), approx, atol=10 * np.max(np.abs(k)) ** 3)


def test_shifted_minimizer_beyond_arcsin_range(params_for):
    # gamma > 1 with k near pi: 1 + gamma cos k < 0, the minimizer passes pi/2
    p = params_for(3.0)
    k = np.array([3.0, 0.0, 0.0])
    q = np.asarray(shifted_minimizer(k, p))
    assert abs(q[0]) > np.pi / 2
    assert abs(pair_energy(k, q, p) - band_bottom(k, p)) < 1e-12


@settings(max_examples=200)
@given(momentum, momentum, gammas)
def test_pair_energy_forms_agree(k, q, g):
    p = ModelParams(g, 1.978)
    assert abs(pair_energy(k, q, p) - pair_energy_rewrite(k, q, p)) < 1e-12 * (1 + g)


@given(momentum, gammas)
def test_minimizer_odd_and_energy_special_cases(k, g):
    p = ModelParams(g, 1.978)
    a = np.asarray(shifted_minimizer(k, p))
    b = np.asarray(shifted_minimizer(-np.asarray(k), p))
    d = wrap(a + b)
    assert np.all(np.minimum(np.abs(d), 2 * np.pi - np.abs(d)) < 1e-12)
    assert abs(pair_energy(np.zeros(3), k, p) - (1 + g) * dispersion(k)) < 1e-12
    assert abs(pair_energy(k, np.zeros(3), p) - g * dispersion(k)) < 1e-12


def test_determinant_resonance(params_for):
    for g in (0.25, 0.5, 1.0, 2.0, 4.0):
        ev = determinant(np.zeros(3), 0.0, params_for(g))
        assert abs(ev.value) <= 10 * ev.error_estimate


def test_determinant_limits_and_sign(p1, rng):
    for k in rng.uniform(-np.pi, np.pi, (10, 3)):
        assert abs(determinant(k, -1e6, p1).value - 1) < 1e-5
        d0 = determinant(k, 0.0, p1).value
        m = float(band_bottom(k, p1))
        dm = determinant(k, m, p1).value
        assert d0 > 0 > dm
        assert determinant(-k, 0.3 * m, p1).value == pytest.approx(determinant(k, 0.3 * m, p1).value, abs=1e-13)
    with pytest.raises(DomainError):
        determinant([1.0, 0, 0], 10.0, p1)


def test_determinant_monotone(p1, rng):
    for k in rng.uniform(-np.pi, np.pi, (5, 3)):
        m = float(band_bottom(k, p1))
        zs = np.sort(rng.uniform(-2, m, 20))
        vals = determinant_values(np.broadcast_to(k, (20, 3)), zs, p1)
        assert np.all(np.diff(vals) < 0)


def test_determinant_grid_route_agrees(p1):
    k = np.array([0.7, -0.4, 1.1])
    m = float(band_bottom(k, p1))
    for z in (-1.0, 0.0, 0.5 * m):
        est = determinant_refined(k, z, p1, tol=1e-9, n_max=128)
        assert abs(est.value - determinant(k, z, p1).value) < 1e-8
    # at the band bottom the integrand has its |q|^-2 point on a cell corner
    est = determinant_refined(k, m, p1, tol=1e-6, n_max=128)
    assert abs(est.value - determinant(k, m, p1).value) < 1e-5


def test_bound_state_energy_properties(params_for, rng):
    for g in (0.5, 1.0, 2.0):
        p = params_for(g)
        for k in rng.uniform(-np.pi, np.pi, (4, 3)):
            s = bound_state_energy(k, p)
            assert 0 < s.z_gamma < s.m_k
            assert s.bracket_width <= 1e-10 * (1 + s.m_k)
            assert abs(determinant(k, s.z_gamma, p).value) < 1e-8
            assert bound_state_energy(-k, p).z_gamma == pytest.approx(s.z_gamma, abs=1e-10)


def test_bound_state_special_cases(p1):
    with pytest.raises(DomainError):
        bound_state_energy(np.zeros(3), p1)
    # gamma = 1, k = (pi, pi, pi): the band collapses to a point and the bottom integral diverges
    s = bound_state_energy([np.pi] * 3, p1)
    assert 0 < s.z_gamma < 6
    small = bound_state_energy([1e-2, 0, 0], p1)
    assert 0 < small.z_gamma < small.m_k


def test_vectorized_bound_states(p1, rng):
    ks = np.vstack([rng.uniform(-np.pi, np.pi, (6, 3)), np.zeros((1, 3))])
    zs = bound_state_energies(ks, p1)
    assert zs[-1] == 0.0
    for k, z in zip(ks[:-1], zs[:-1]):
        assert z == pytest.approx(bound_state_energy(k, p1).z_gamma, abs=1e-9)


def test_two_body_oracle_secular_and_dense(p1):
    k = np.array([np.pi, 0, 0])
    g = GridSpec(10)
    lam = two_body_oracle(k, p1, g)
    assert abs(determinant_on_grid(k, lam, p1, g)) < 1e-10
    assert lam == pytest.approx(two_body_oracle_dense(k, p1, g), abs=1e-9)
    z_grid = bound_state_energy(k, p1, tol=1e-13, grid=g).z_gamma
    assert abs(z_grid - lam) < 1e-10


def test_two_body_oracle_converges(p1):
    k = np.array([np.pi, 0, 0])
    z = bound_state_energy(k, p1).z_gamma
    errs = [abs(two_body_oracle(k, p1, GridSpec(n)) - z) for n in (8, 16, 32)]
    assert errs[-1] < errs[0] and errs[-1] < 1e-6


def test_two_body_oracle_resonance_artifact(p1):
    lams = [two_body_oracle(np.zeros(3), p1, GridSpec(n)) for n in (8, 16, 32)]
    # the discrete resonance sits just above zero and closes in on it
    assert all(abs(l) < 0.15 for l in lams)
    assert abs(lams[2]) < abs(lams[1]) < abs(lams[0])


def test_threshold_slope(params_for):
    p = params_for(1.0)
    slope = threshold_slope(p)
    assert slope == pytest.approx(p.mu0 / (2 * math.pi), rel=1e-6)
    for g in (0.5, 2.0, 5.0):
        q = params_for(g)
        s = threshold_slope(q)
        assert s > 0
        assert s == pytest.approx(threshold_slope_candidates(q)["no_gamma_power"], rel=1e-6)


def test_threshold_expansion_residual(p1):
    slope = threshold_slope(p1)
    ws = np.array([1e-2, 5e-3, 2.5e-3])
    d = determinant_values(np.zeros((3, 3)), -(ws**2), p1)
    resid = np.abs(d - slope * ws)
    # residual is O(omega^2)
    assert np.all(resid / ws**2 < 10)
