"""Two-particle layer: coupling, Fredholm determinant and bound-state dispersion.

A pair with quasi-momentum k has kinetic energy

    E_k(q) = eps(q) + gamma * eps(k - q) = 3 (1 + gamma) - sum_j a_j cos(q_j - phi_j)

with amplitudes a_j = |1 + gamma exp(i k_j)| and phases phi_j = arg(1 + gamma
exp(i k_j)).  The band of the pair is [m(k), M(k)] with m, M = 3(1+gamma) -/+
sum a_j, attained at q = phi.  Bound states are the zeros of

    Delta(k, z) = 1 - v / (2 pi)^3 * integral dq / (E_k(q) - z),

and v = mu0 (1 + gamma) is tuned so that Delta(0, 0) = 0 (a zero-energy
resonance at k = 0).

Two independent evaluation routes are provided.  The default uses the
Laplace/Bessel representation of the anisotropic lattice Green function
(`lattice_green`); the grid route sums the offset midpoint rule on a
lattice translated so that the pair-energy minimum sits on a cell corner.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import BracketError, DomainError
from .torus import (
    TORUS_VOLUME,
    GridSpec,
    QuadratureEstimate,
    TorusVec,
    as_points,
    dispersion,
    grid_nodes,
    lattice_green,
    refine,
    wrap,
)

WATSON_INTEGRAL = 0.50546201971732600605


def watson_closed_form() -> float:
    """(2 pi)^-3 * integral of 1/eps over T^3 from the Gamma-function product."""
    g = [math.gamma(x / 24.0) for x in (1, 5, 7, 11)]
    return math.sqrt(6.0) / (96.0 * math.pi**3) * g[0] * g[1] * g[2] * g[3]


def watson_integral(tol: float = 1e-10, n_start: int = 16, n_max: int = 256) -> QuadratureEstimate:
    """Normalized integral (2 pi)^-3 * int dp / eps(p) by refined offset grids."""
    return refine(lambda p: 1.0 / dispersion(p) / TORUS_VOLUME, tol, n_start, n_max)


@functools.lru_cache(maxsize=None)
def _mu0_cached(tol: float, n_max: int):
    est = watson_integral(tol, n_max=n_max)
    return 1.0 / est.value, est.error_estimate / est.value**2, est


def compute_mu0(tol: float = 1e-10, n_max: int = 256) -> float:
    """Coupling normalization mu0 = 1 / [(2 pi)^-3 int dp / eps(p)].

    The integral is refined on offset midpoint grids (see `refine`); the
    result is cached per (tol, n_max).
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    return _mu0_cached(float(tol), int(n_max))[0]


def compute_mu0_with_error(tol: float = 1e-10, n_max: int = 256):
    """Return ``(mu0, error_estimate, QuadratureEstimate)``."""
    if tol <= 0:
        raise DomainError("tol must be positive")
    return _mu0_cached(float(tol), int(n_max))


@dataclass(frozen=True)
class ModelParams:
    """Mass ratio gamma, coupling normalization and the derived constants.

    ``coupling_scale`` multiplies the resonant coupling and exists only to
    probe how sharply the resonance condition depends on it.
    """

    gamma: float
    mu0: float
    mu0_error: float = 0.0
    coupling_scale: float = 1.0

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise DomainError("gamma must be a positive finite number")
        if not self.mu0 > 0:
            raise DomainError("mu0 must be positive")

    @classmethod
    def from_gamma(cls, gamma: float, mu0: Optional[float] = None, tol: float = 1e-10) -> "ModelParams":
        if mu0 is None:
            mu0, err, _ = compute_mu0_with_error(tol)
            return cls(float(gamma), mu0, err)
        return cls(float(gamma), float(mu0))

    def with_coupling_scale(self, scale: float) -> "ModelParams":
        return replace(self, coupling_scale=float(scale))

    @property
    def v_gamma(self) -> float:
        return self.coupling_scale * self.mu0 * (1.0 + self.gamma)

    @property
    def u_gamma(self) -> float:
        return (1.0 + self.gamma) / math.sqrt(1.0 + 2.0 * self.gamma)

    @property
    def s_gamma(self) -> float:
        return self.gamma / (1.0 + self.gamma)

    @property
    def D_gamma(self) -> float:
        return (1.0 + self.gamma) ** 1.5 / (2.0 * math.pi**2)

    @property
    def n_gamma(self) -> float:
        return (1.0 + 2.0 * self.gamma) / (1.0 + self.gamma)

    @property
    def M_gamma(self) -> float:
        return (1.0 + 2.0 * self.gamma) / self.gamma

    def constants(self) -> dict:
        return {
            "gamma": self.gamma,
            "mu0": self.mu0,
            "v_gamma": self.v_gamma,
            "u_gamma": self.u_gamma,
            "s_gamma": self.s_gamma,
            "D_gamma": self.D_gamma,
            "n_gamma": self.n_gamma,
            "M_gamma": self.M_gamma,
        }


@dataclass(frozen=True)
class DeterminantEval:
    k: TorusVec
    z: float
    value: float
    error_estimate: float


@dataclass(frozen=True)
class BoundStateSample:
    k: TorusVec
    z_gamma: float
    m_k: float
    bracket_width: float


# ---------------------------------------------------------------------------
# Pair kinematics


def pair_coefficients(k, gamma: float):
    """Amplitudes a, phases phi and band bottom m for pair momenta k of shape (..., 3)."""
    k = as_points(k)
    re = 1.0 + gamma * np.cos(k)
    im = gamma * np.sin(k)
    a = np.hypot(re, im)
    phi = np.arctan2(im, re)
    # (1+gamma) - a_j = 2 gamma (1 - cos k_j) / (1 + gamma + a_j), free of cancellation
    one_minus_cos = 2.0 * np.sin(0.5 * k) ** 2
    m = np.sum(2.0 * gamma * one_minus_cos / (1.0 + gamma + a), axis=-1)
    return a, phi, m


def band_bottom(k, params: ModelParams):
    """Lower edge m(k) of the two-particle band, 3(1+gamma) - sum_j a_j."""
    return pair_coefficients(k, params.gamma)[2]


def band_top(k, params: ModelParams):
    """Upper edge M(k) of the two-particle band, 3(1+gamma) + sum_j a_j."""
    a = pair_coefficients(k, params.gamma)[0]
    return 3.0 * (1.0 + params.gamma) + np.sum(a, axis=-1)


def shifted_minimizer(k, params: ModelParams) -> TorusVec:
    """Relative momentum q minimizing E_k(q), componentwise arg(1 + gamma e^{i k_j})."""
    phi = pair_coefficients(np.asarray(k, dtype=float), params.gamma)[1]
    return TorusVec.of(phi)


def pair_energy(k, q, params: ModelParams):
    """eps(q) + gamma * eps(k - q), broadcasting over leading axes."""
    k = as_points(k)
    q = as_points(q)
    return dispersion(q) + params.gamma * dispersion(k - q)


def pair_energy_rewrite(k, q, params: ModelParams):
    """The same energy written as 3(1+gamma) - sum_j a_j cos(q_j - phi_j)."""
    a, phi, _ = pair_coefficients(k, params.gamma)
    q = as_points(q)
    return 3.0 * (1.0 + params.gamma) - np.sum(a * np.cos(q - phi), axis=-1)


# ---------------------------------------------------------------------------
# Determinant


def determinant_values(k, z, params: ModelParams, panels: int = 128):
    """Vectorized Bessel-route determinant for k (..., 3) and z broadcasting over k[..., 0].

    Points with z above the band bottom raise `DomainError`.  At z equal to
    the band bottom with a vanishing amplitude the integral diverges and the
    value is -inf.
    """
    a, _, m = pair_coefficients(k, params.gamma)
    z = np.asarray(z, dtype=float)
    s = m - z
    if np.any(s < 0):
        raise DomainError("z lies above the band bottom m(k)")
    g = lattice_green(a, s, panels=panels)
    return 1.0 - params.v_gamma * g


def centered_grid(grid: GridSpec, k, params: ModelParams) -> GridSpec:
    """Translate an ungraded grid so the minimum of E_k sits on a cell corner."""
    if grid.grading is not None:
        return grid
    return replace(grid, origin=tuple(shifted_minimizer(k, params)))


def _grid_pair_energies(k, params: ModelParams, grid: GridSpec):
    nodes, weights = grid_nodes(centered_grid(grid, k, params))
    return pair_energy(np.asarray(k, dtype=float), nodes, params), weights


def determinant_on_grid(k, z, params: ModelParams, grid: GridSpec) -> float:
    """Delta(k, z) with the integral replaced by the quadrature sum on ``grid``."""
    e, w = _grid_pair_energies(k, params, grid)
    return _discrete_delta(e, w, z, params)


def _discrete_delta(e, w, z, params):
    gap = e - z
    if np.any(gap <= 0):
        raise DomainError("z is not below every node energy of the grid")
    return 1.0 - params.v_gamma / TORUS_VOLUME * float(np.sum(w / gap))


def determinant(k, z: float, params: ModelParams, grid: Optional[GridSpec] = None) -> DeterminantEval:
    """Fredholm determinant Delta(k, z) for z at or below the band bottom.

    Without ``grid`` the Bessel route is used; its error estimate combines
    the change under halving the panel count with the propagated
    uncertainty of mu0.  With ``grid`` the offset midpoint sum on the
    centred grid is returned, with the change against the grid of half the
    resolution as error estimate.
    """
    kv = k if isinstance(k, TorusVec) else TorusVec.of(k)
    kk = np.asarray(kv)
    z = float(z)
    m = float(band_bottom(kk, params))
    if z > m:
        raise DomainError(f"z={z!r} lies above the band bottom m(k)={m!r}")
    if grid is None:
        fine = float(determinant_values(kk, z, params, panels=128))
        coarse = float(determinant_values(kk, z, params, panels=64))
        rel_mu0 = params.mu0_error / params.mu0
        err = abs(fine - coarse) + abs(1.0 - fine) * rel_mu0 if math.isfinite(fine) else math.inf
        return DeterminantEval(kv, z, fine, err)
    value = determinant_on_grid(kk, z, params, grid)
    if grid.n_per_axis >= 4 and grid.n_per_axis % 2 == 0:
        half = replace(grid, n_per_axis=grid.n_per_axis // 2)
        err = abs(value - determinant_on_grid(kk, z, params, half))
    else:
        err = math.inf
    return DeterminantEval(kv, z, value, err)


def determinant_refined(k, z: float, params: ModelParams, tol: float = 1e-8, n_start: int = 16, n_max: int = 128) -> QuadratureEstimate:
    """Grid route with Richardson-refined doubling; returns the estimate of Delta."""
    kk = np.asarray(TorusVec.of(k) if not isinstance(k, TorusVec) else k)
    if z > float(band_bottom(kk, params)):
        raise DomainError("z lies above the band bottom m(k)")
    v = params.v_gamma

    def integrand(q):
        return v / TORUS_VOLUME / (pair_energy(kk, q, params) - z)

    origin = tuple(shifted_minimizer(kk, params))
    est = refine(integrand, tol, n_start, n_max, origin=origin)
    return QuadratureEstimate(1.0 - est.value, est.error_estimate, est.levels_used, [1.0 - r for r in est.raw_values], est.converged)


# ---------------------------------------------------------------------------
# Bound states


def _bisect(f, lo, hi, tol, max_iter=200):
    f_lo = f(lo)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return lo, hi


def bound_state_energy(k, params: ModelParams, tol: Optional[float] = None, grid: Optional[GridSpec] = None) -> BoundStateSample:
    """Bisection root z(k) of Delta(k, .) below the band bottom (k != 0).

    The bracket starts at [1e-6 m, (1 - 1e-6) m].  When Delta is not yet
    positive at the left end, the left end moves to 0 and then to negative
    values; with ``grid`` the discrete determinant may stay positive at
    z = m, in which case the right end moves up towards the lowest node
    energy where the discrete root must lie.

    Raises
    ------
    BracketError
        When no sign change is found.
    """
    kv = k if isinstance(k, TorusVec) else TorusVec.of(k)
    kk = np.asarray(kv)
    if kv.is_zero():
        raise DomainError("bound_state_energy needs k != 0; z(0) = 0 is the resonance")
    m = float(band_bottom(kk, params))
    if tol is None:
        tol = 1e-10 * (1.0 + m)
    if grid is None:
        def f(z):
            return float(determinant_values(kk, z, params))
        e_floor = m
    else:
        e, w = _grid_pair_energies(kk, params, grid)

        def f(z):
            return _discrete_delta(e, w, z, params)
        e_floor = float(e.min())

    lo, hi = 1e-6 * m, (1.0 - 1e-6) * m
    f_lo, f_hi = f(lo), f(hi)
    if not f_hi < 0:
        # the true band bottom, or just below the lowest node energy on a grid
        hi = m if grid is None else m + (e_floor - m) * (1.0 - 1e-9)
        f_hi = f(hi)
    for candidate in (0.0, -m, -10.0 * (1.0 + m)):
        if f_lo > 0:
            break
        lo, f_lo = candidate, f(candidate)
    if not (f_lo > 0 and f_hi < 0):
        raise BracketError("no sign change of the determinant", lo, hi, f_lo, f_hi)
    lo, hi = _bisect(f, lo, hi, tol)
    return BoundStateSample(kv, 0.5 * (lo + hi), m, hi - lo)


def bound_state_energies(ks, params: ModelParams, tol: float = 1e-12, panels: int = 128):
    """Vectorized bisection for z(k) on an (N, 3) array of momenta; z(0) = 0.

    Uses the Bessel-route determinant; intended for the many-k sweeps of
    the three-body layer.
    """
    ks = as_points(ks).reshape(-1, 3)
    m = band_bottom(ks, params)
    out = np.zeros(len(ks))
    live = m > 0
    if not np.any(live):
        return out
    kl, ml = ks[live], m[live]
    lo = np.full(len(ml), -10.0 * (1.0 + ml.max()))
    # start the right end at m itself so that the -inf divergence case is included
    hi = ml.copy()
    f_lo = determinant_values(kl, lo, params, panels)
    f_hi = determinant_values(kl, hi, params, panels)
    bad = ~((f_lo > 0) & (f_hi < 0))
    if np.any(bad):
        i = int(np.argmax(bad))
        raise BracketError("no sign change of the determinant", lo[i], hi[i], f_lo[i], f_hi[i])
    # bisection to tol relative to (1 + m)
    while True:
        width = hi - lo
        if np.all(width <= tol * (1.0 + ml)):
            break
        mid = 0.5 * (lo + hi)
        f_mid = determinant_values(kl, mid, params, panels)
        pos = f_mid > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    out[live] = 0.5 * (lo + hi)
    return out


def two_body_oracle(k, params: ModelParams, grid: GridSpec) -> float:
    """Lowest eigenvalue of the discretized pair fiber on ``grid``.

    The fiber is diag(E_k(q_i)) minus v (2 pi)^-3 times the rank-one matrix
    sqrt(w_i w_j).  Its lowest eigenvalue solves the secular equation
    1 = v (2 pi)^-3 sum_i w_i / (E_i - lambda) below min E_i, found by
    Brent's method instead of a dense eigensolve.
    """
    if grid.n_per_axis > 64:
        raise DomainError("two_body_oracle is meant for modest grids (n <= 64)")
    kk = np.asarray(TorusVec.of(k) if not isinstance(k, TorusVec) else k)
    e, w = _grid_pair_energies(kk, params, grid)
    c = params.v_gamma / TORUS_VOLUME
    e_min = float(e.min())

    def secular(lam):
        return 1.0 - c * float(np.sum(w / (e - lam)))

    lo = e_min - params.v_gamma - 1.0
    # step towards e_min until the secular function turns negative
    gap = max(1e-3, 1e-3 * abs(e_min))
    hi = e_min - gap
    while secular(hi) > 0:
        gap *= 1e-3
        if gap < 1e-300:
            raise BracketError("secular equation has no root below the lowest node energy")
        hi = e_min - gap
    return float(brentq(secular, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def two_body_oracle_dense(k, params: ModelParams, grid: GridSpec) -> float:
    """Lowest eigenvalue by a dense symmetric eigensolve (small grids only)."""
    kk = np.asarray(TorusVec.of(k) if not isinstance(k, TorusVec) else k)
    e, w = _grid_pair_energies(kk, params, grid)
    if len(e) > 4096:
        raise DomainError("dense oracle limited to 4096 nodes")
    root = np.sqrt(w)
    h = np.diag(e) - params.v_gamma / TORUS_VOLUME * np.outer(root, root)
    return float(np.linalg.eigvalsh(h)[0])


# ---------------------------------------------------------------------------
# Threshold behaviour at k = 0


def threshold_slope(params: ModelParams, h: float = 1e-2) -> float:
    """Slope at 0+ of omega -> Delta(0, -omega^2), Richardson over steps h and h/2.

    The difference quotients (Delta(0,-w^2) - Delta(0,0)) / w have an
    expansion c1 + c2 w + c3 w^2 + ..., so the combination of h, h/2 and
    h/4 cancelling the first two corrections is returned.
    """
    if h <= 0:
        raise DomainError("h must be positive")
    zero = np.zeros(3)
    ws = np.array([h, h / 2, h / 4])
    vals = determinant_values(np.broadcast_to(zero, (4, 3)), np.concatenate([[0.0], -(ws**2)]), params)
    d = (vals[1:] - vals[0]) / ws
    r1 = 2.0 * d[1:] - d[:-1]
    return float((4.0 * r1[1] - r1[0]) / 3.0)


def threshold_slope_candidates(params: ModelParams) -> dict:
    """Closed-form constants for the threshold slope, keyed by their form.

    ``"no_gamma_power"``: v / (sqrt(2) pi (1+gamma)^{3/2});
    ``"gamma_power"``: the same times gamma^{3/2}.
    """
    base = params.v_gamma / (math.sqrt(2.0) * math.pi * (1.0 + params.gamma) ** 1.5)
    return {"no_gamma_power": base, "gamma_power": base * params.gamma**1.5}


def dispersion_table(ks, params: ModelParams, tol: Optional[float] = None):
    """Rows (k, m(k), z(k), bracket width) along a list of momenta.

    Bracket failures are recorded per row as ``None`` values with the
    error message instead of aborting the sweep.
    """
    rows = []
    for k in ks:
        kv = TorusVec.of(k)
        m = float(band_bottom(np.asarray(kv), params))
        if kv.is_zero():
            rows.append({"k": kv, "m": m, "z": 0.0, "bracket": 0.0, "error": None})
            continue
        try:
            s = bound_state_energy(kv, params, tol)
            rows.append({"k": kv, "m": m, "z": s.z_gamma, "bracket": s.bracket_width, "error": None})
        except BracketError as exc:
            warnings.warn(str(exc), RuntimeWarning)
            rows.append({"k": kv, "m": m, "z": None, "bracket": None, "error": str(exc)})
    return rows
