import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lattice_efimov.errors import ConvergenceWarning, DomainError, SingularNodeError
from lattice_efimov.torus import (
    TORUS_VOLUME,
    GridSpec,
    RadialLog,
    TorusVec,
    dispersion,
    grid_nodes,
    hopping_coefficients,
    lattice_green,
    quadrature,
    refine,
    wrap,
)
from lattice_efimov.two_body import WATSON_INTEGRAL, watson_closed_form

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)


def test_wrap_examples():
    assert np.allclose(wrap([1.5 * np.pi, 0, 0]), [-0.5 * np.pi, 0, 0])
    assert np.array_equal(wrap([np.pi, np.pi, np.pi]), [np.pi] * 3)
    assert np.array_equal(wrap([-np.pi, 0, 0]), [np.pi, 0, 0])


def test_wrap_rejects_nonfinite():
    with pytest.raises(DomainError):
        wrap([np.nan, 0, 0])
    with pytest.raises(DomainError):
        TorusVec.of([np.inf, 0, 0])


@given(vec3)
def test_wrap_range_and_idempotence(x):
    y = wrap(x)
    assert np.all(y > -np.pi) and np.all(y <= np.pi)
    assert np.array_equal(wrap(y), y)


@given(vec3, vec3)
def test_wrap_group_law(a, b):
    lhs = wrap(np.add(a, b))
    rhs = wrap(wrap(a) + wrap(b))
    # equal as points of the torus
    d = wrap(lhs - rhs)
    assert np.all(np.minimum(np.abs(d), 2 * np.pi - np.abs(d)) < 1e-9)


@given(vec3, vec3, st.floats(-5, 5))
def test_torusvec_arithmetic_stays_in_range(a, b, s):
    u, v = TorusVec.of(a), TorusVec.of(b)
    for w in (u + v, u - v, -u, s * u):
        assert all(-np.pi < c <= np.pi for c in w)


def test_dispersion_examples():
    assert dispersion([0, 0, 0]) == 0.0
    assert dispersion([np.pi] * 3) == 6.0
    p = np.array([0.6, -0.8, 0.0]) * 1e-3
    assert abs(dispersion(p) - 0.5 * p @ p) <= 1e-5 * 0.5 * p @ p


def test_dispersion_even_and_bounded(rng):
    p = rng.uniform(-np.pi, np.pi, size=(1000, 3))
    e = dispersion(p)
    assert np.array_equal(e, dispersion(-p))
    assert np.all(e >= 0) and np.all(e <= 6)


def test_hopping_coefficients():
    c = hopping_coefficients(2)
    assert abs(c[(0, 0, 0)] - 3) < 1e-12
    for s, v in c.items():
        norm1 = sum(abs(x) for x in s)
        expected = 3.0 if norm1 == 0 else (-0.5 if norm1 == 1 else 0.0)
        assert abs(v - expected) < 1e-12, s


def test_quadrature_weights_and_harmonics():
    g = GridSpec(8)
    assert abs(quadrature(lambda p: np.ones(len(p)), g) - TORUS_VOLUME) < 1e-10
    assert abs(quadrature(lambda p: np.cos(p[:, 0]), g)) < 1e-12
    for s in [(1, 0, 0), (2, -3, 1), (7, 7, 7), (0, 5, -6)]:
        val = quadrature(lambda p: np.cos(p @ np.array(s, float)), g)
        assert abs(val) < 1e-12, s


def test_quadrature_dim2():
    g = GridSpec(6)
    val = quadrature(lambda p, q: np.ones(np.broadcast_shapes(p.shape[:-1], q.shape[:-1])), g, dim=2)
    assert abs(val - TORUS_VOLUME**2) < 1e-6


def test_watson_integral_offset_grid():
    assert abs(watson_closed_form() - WATSON_INTEGRAL) < 1e-15
    for n in (8, 16, 32):
        val = quadrature(lambda p: 1 / dispersion(p), GridSpec(n)) / TORUS_VOLUME
        assert math.isfinite(val)
    with pytest.raises(SingularNodeError):
        with np.errstate(divide="ignore"):
            quadrature(lambda p: 1 / dispersion(p), GridSpec(8, offset=False))


def test_refine_watson():
    est = refine(lambda p: 1 / dispersion(p) / TORUS_VOLUME, 1e-8)
    assert est.converged
    assert abs(est.value - WATSON_INTEGRAL) < 1e-8
    assert est.error_estimate < 1e-8


def test_refine_constant_converges_first_doubling():
    est = refine(lambda p: np.ones(len(p)), 1e-12, n_start=4)
    assert est.converged and est.levels_used == [4, 8]
    assert abs(est.value - TORUS_VOLUME) < 1e-9


def test_refine_smooth_is_stable():
    est = refine(lambda p: 1 / (dispersion(p) + 1), 1e-10, n_start=8)
    assert est.converged
    assert abs(est.raw_values[-1] - est.raw_values[-2]) < 1e-10


def test_refine_error_estimates_shrink_for_watson():
    est = refine(lambda p: 1 / dispersion(p) / TORUS_VOLUME, 1e-14, n_max=128)
    # recompute the successive extrapolated differences
    from lattice_efimov.torus import richardson

    hs = [2 * np.pi / n for n in est.levels_used]
    ex = [richardson(est.raw_values[: i + 1], hs[: i + 1], (1, 3, 5, 7)) for i in range(len(hs))]
    diffs = [abs(b - a) for a, b in zip(ex, ex[1:])]
    assert diffs[-1] < diffs[-2]


def test_refine_budget_warns():
    with pytest.warns(ConvergenceWarning):
        est = refine(lambda p: 1 / dispersion(p), 1e-16, n_max=32)
    assert not est.converged and est.error_estimate > 0


@pytest.mark.parametrize("cube", [None, 1, 2])
def test_graded_grid_weights_and_center(cube):
    center = (0.3, -1.0, 2.0)
    g = GridSpec(8, grading=RadialLog(center, 1e-3, 6, cube))
    nodes, w = grid_nodes(g)
    assert abs(w.sum() - TORUS_VOLUME) < 1e-9
    assert np.all(w > 0)
    d = wrap(nodes - np.asarray(center))
    assert np.min(np.linalg.norm(d, axis=1)) > 0
    # smallest radius resolved
    assert np.min(np.linalg.norm(d, axis=1)) < 1e-3


def test_graded_grid_doubling():
    g = GridSpec(8, grading=RadialLog((0, 0, 0), 1e-3, 6, 1))
    d = g.doubled()
    assert d.n_per_axis == 16 and d.grading.levels == 12 and d.grading.cube_cells == 2


def test_graded_grid_integrates_singular_point():
    g = GridSpec(16, grading=RadialLog((0, 0, 0), 1e-4, 12, 2, radial_order=3, face_order=6))
    val = quadrature(lambda p: 1 / dispersion(p), g) / TORUS_VOLUME
    # outer region is second order in the spacing
    assert abs(val - WATSON_INTEGRAL) < 3e-3


def test_lattice_green_watson_and_grid():
    assert abs(lattice_green(np.ones(3), 0.0) - WATSON_INTEGRAL) < 1e-13
    a = np.array([0.7, 1.3, 2.1])
    s = 0.3
    grid_val = quadrature(lambda q: 1 / ((1 - np.cos(q)) @ a + s), GridSpec(48)) / TORUS_VOLUME
    assert abs(lattice_green(a, s) - grid_val) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.tuples(*[st.floats(0.2, 3.0)] * 3), st.floats(1e-3, 5.0))
def test_lattice_green_matches_refined_grid(a, s):
    a = np.array(a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        est = refine(lambda q: 1 / ((1 - np.cos(q)) @ a + s) / TORUS_VOLUME, 1e-10, n_start=16, n_max=128)
    assert abs(lattice_green(a, s) - est.value) <= 10 * est.error_estimate + 1e-11


def test_lattice_green_divergent_and_domain():
    assert lattice_green([0.0, 1.0, 1.0], 0.0) == np.inf
    assert np.isfinite(lattice_green([0.0, 1.0, 1.0], 0.1))
    with pytest.raises(DomainError):
        lattice_green([1.0, 1.0, 1.0], -1.0)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 7, 8])
def test_offset_grid_never_holds_origin(n):
    nodes, w = grid_nodes(GridSpec(n))
    assert np.min(np.abs(nodes).max(axis=1)) > 0
    assert abs(w.sum() - TORUS_VOLUME) < 1e-9
    assert np.all(nodes > -np.pi) and np.all(nodes <= np.pi)
