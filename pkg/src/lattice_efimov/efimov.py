"""Scale-invariant model operator behind the logarithmic growth of eigenvalue counts.

Near threshold the Birman-Schwinger operator at K = 0 reduces, in the
variables x = log|p| and the cosine t of the angle between p and q, to
the convolution kernel

    S(t; y) = (2 pi)^-2 u / (cosh y + s t),   u = (1+g)/sqrt(1+2g),  s = g/(1+g),

on an interval of length r ~ |log(energy scale)| / 2.  Its Fourier symbol in
y and Legendre partial waves in t give the coefficient

    U(mu) = (4 pi)^-1 sum_l (2l + 1) |{lambda : S_l(lambda) > mu}|,

the asymptotic number of eigenvalues above mu per unit of 2r.

Everything here uses the positive sign of the kernel, which belongs to
the exchange-symmetric sector.  Pass ``sign=-1`` to get the symbols of the
antisymmetric (identical-fermion) sector, where the odd partial waves
carry the negative values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.linalg import eigvalsh, toeplitz
from scipy.special import eval_legendre

from .errors import DomainError
from .two_body import ModelParams


def _check_sign(sign):
    if sign not in (1, -1, 1.0, -1.0):
        raise DomainError("sign must be +1 or -1")
    return float(sign)


def s_kernel(t, y, params: ModelParams, sign: float = 1.0):
    """Model kernel (2 pi)^-2 u / (cosh y + s t) for |t| <= 1."""
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1):
        raise DomainError("|t| must not exceed 1")
    y = np.asarray(y, dtype=float)
    return _check_sign(sign) * params.u_gamma / (4 * np.pi**2) / (np.cosh(y) + params.s_gamma * t)


def s_hat(t, lam, params: ModelParams, sign: float = 1.0):
    """Fourier transform in y of `s_kernel`.

    (2 pi)^-1 u sinh(lam a) / (sqrt(1 - s^2 t^2) sinh(pi lam)) with
    a = arccos(s t); the ratio sinh(lam a)/sinh(pi lam) tends to a/pi at
    lam = 0.
    """
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1):
        raise DomainError("|t| must not exceed 1")
    lam = np.abs(np.asarray(lam, dtype=float))
    st = params.s_gamma * t
    a = np.arccos(st)
    small = lam < 1e-8
    safe = np.where(small, 1.0, lam)
    # sinh(lam a)/sinh(pi lam) = exp(-lam (pi - a)) (1 - e^{-2 lam a}) / (1 - e^{-2 pi lam})
    ratio = np.exp(-safe * (np.pi - a)) * (-np.expm1(-2 * safe * a)) / (-np.expm1(-2 * np.pi * safe))
    ratio = np.where(small, a / np.pi, ratio)
    return _check_sign(sign) * params.u_gamma / (2 * np.pi) * ratio / np.sqrt(1.0 - st**2)



def s_hat_numeric(t: float, lam: float, params: ModelParams, window: float = 60.0) -> float:
    """Fourier transform of `s_kernel` in y by adaptive cosine-weighted quadrature."""
    f = lambda y: float(s_kernel(t, y, params))
    if lam == 0:
        val, _ = quad(f, 0.0, window, limit=400, epsabs=1e-14, epsrel=1e-12)
    else:
        val, _ = quad(f, 0.0, window, weight="cos", wvar=abs(lam), limit=400, epsabs=1e-14)
    return 2.0 * val


def _gauss(n_gauss: int):
    if n_gauss < 32:
        raise DomainError("n_gauss must be at least 32")
    return np.polynomial.legendre.leggauss(n_gauss)


def partial_wave(l: int, lam, params: ModelParams, n_gauss: int = 64, sign: float = 1.0):
    """Degree-l Legendre moment 2 pi int_{-1}^{1} P_l(t) s_hat(t, lam) dt."""
    if l < 0:
        raise DomainError("l must be nonnegative")
    x, w = _gauss(n_gauss)
    lam = np.asarray(lam, dtype=float)
    vals = s_hat(x, lam[..., None], params, sign)
    return 2 * np.pi * np.sum(w * eval_legendre(l, x) * vals, axis=-1)


def s0_closed_form(lam, params: ModelParams, sign: float = 1.0):
    """l = 0 wave in closed form, u sinh(lam arcsin s) / (s lam cosh(pi lam / 2))."""
    lam = np.abs(np.asarray(lam, dtype=float))
    s, u = params.s_gamma, params.u_gamma
    b = math.asin(s)
    small = lam < 1e-8
    safe = np.where(small, 1.0, lam)
    # ratio sinh(lam b)/cosh(pi lam/2) written with decaying exponentials
    ratio = 2.0 * np.exp(-safe * (0.5 * np.pi - b)) * (-np.expm1(-2 * safe * b)) / (2.0 * (1.0 + np.exp(-np.pi * safe)))
    val = np.where(small, u * b / s, u * ratio / (s * safe))
    return _check_sign(sign) * val


@dataclass
class PartialWaveTable:
    gamma: float
    l_max: int
    lambda_grid: np.ndarray
    values: np.ndarray
    level_measures: Optional[np.ndarray] = None


def partial_wave_table(params: ModelParams, l_max: int = 8, lambda_grid: Optional[Sequence[float]] = None, mu: Optional[float] = None, n_gauss: int = 64, sign: float = 1.0) -> PartialWaveTable:
    """Table of S_l(lambda) for l <= l_max, with per-l level measures when ``mu`` is given."""
    lam = np.linspace(-10, 10, 201) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    vals = np.array([partial_wave(l, lam, params, n_gauss, sign) for l in range(l_max + 1)])
    meas = None
    if mu is not None:
        meas = np.array([level_set_measure(l, mu, params, sign=sign) for l in range(l_max + 1)])
    return PartialWaveTable(params.gamma, l_max, lam, vals, meas)


def level_set_measure(l: int, mu: float, params: ModelParams, tol: float = 1e-12, window: float = 20.0, n_scan: int = 2001, n_gauss: int = 64, sign: float = 1.0) -> float:
    """Lebesgue measure of {lambda : S_l(lambda) > mu}.

    The even symbol is scanned on [0, window]; every sign change of
    S_l - mu is refined by bisection to ``tol``.  The window doubles while
    the symbol at its edge still exceeds mu / 100.
    """
    if mu <= 0:
        raise DomainError("mu must be positive")
    f = lambda x: partial_wave(l, x, params, n_gauss, sign) - mu
    while abs(float(f(window)) + mu) > mu / 100.0:
        window *= 2.0
        if window > 1e4:
            raise DomainError("symbol does not decay inside the search window")
    xs = np.linspace(0.0, window, n_scan)
    fs = f(xs)
    above = fs > 0
    total = 0.0
    start = 0.0 if above[0] else None
    for i in range(1, n_scan):
        if above[i] == above[i - 1]:
            continue
        lo, hi = xs[i - 1], xs[i]
        f_lo = fs[i - 1]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if (f(mid) > 0) == (f_lo > 0):
                lo = mid
            else:
                hi = mid
        root = 0.5 * (lo + hi)
        if above[i]:
            start = root
        else:
            total += root - start
            start = None
    if start is not None:
        total += window - start
    return 2.0 * total


@dataclass
class EfimovCoefficient:
    mu: float
    gamma: float
    value: float
    l_max: int
    window: float
    truncation_estimate: float
    per_l: list = field(default_factory=list)
    sign: float = 1.0


def efimov_coefficient(mu: float, params: ModelParams, l_max: int = 8, tol: float = 1e-12, sign: float = 1.0, window: float = 20.0) -> EfimovCoefficient:
    """U(mu) = (4 pi)^-1 sum_{l <= l_max} (2l+1) level_set_measure(l, mu).

    The truncation estimate is the contribution the first omitted wave
    l_max + 1 would add.
    """
    if mu <= 0:
        raise DomainError("mu must be positive")
    if l_max < 4:
        raise DomainError("l_max must be at least 4")
    per_l = [level_set_measure(l, mu, params, tol, window, sign=sign) for l in range(l_max + 2)]
    per_l = [float(m) for m in per_l]
    value = sum((2 * l + 1) * m for l, m in enumerate(per_l[:-1])) / (4 * np.pi)
    trunc = (2 * l_max + 3) * per_l[-1] / (4 * np.pi)
    return EfimovCoefficient(mu, params.gamma, value, l_max, window, trunc, per_l[:-1], sign)


def s_partial_kernel(l: int, y, params: ModelParams, n_gauss: int = 64, sign: float = 1.0):
    """2 pi int P_l(t) S(t; y) dt, the degree-l convolution kernel in y."""
    x, w = _gauss(n_gauss)
    y = np.asarray(y, dtype=float)
    vals = s_kernel(x, y[..., None], params, sign)
    return 2 * np.pi * np.sum(w * eval_legendre(l, x) * vals, axis=-1)


@dataclass
class SOperatorCount:
    r: float
    mu: float
    count: int
    ratio: float
    per_l: list
    n_x: int


def s_operator_count(r: float, mu: float, params: ModelParams, l_max: int = 8, n_x: int = 600, n_gauss: int = 64, sign: float = 1.0) -> SOperatorCount:
    """Eigenvalues above mu of the model operator on (0, r), summed over waves with weight 2l+1.

    Each wave is discretized by the midpoint rule on a uniform x grid; the
    table h S_l(x_i - x_j) is a symmetric Toeplitz matrix.  ``ratio`` is
    count / (2 r), which tends to U(mu) as r grows.
    """
    if r <= 0 or n_x < 2:
        raise DomainError("r must be positive and n_x at least 2")
    h = r / n_x
    y = np.arange(n_x) * h
    per_l = []
    for l in range(l_max + 1):
        col = h * s_partial_kernel(l, y, params, n_gauss, sign)
        ev = eigvalsh(toeplitz(col))
        per_l.append(int(np.sum(ev > mu)))
    count = sum((2 * l + 1) * c for l, c in enumerate(per_l))
    return SOperatorCount(r, mu, count, count / (2 * r), per_l, n_x)


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    residual: float


def slope_fit(points) -> SlopeFit:
    """Least-squares line through (x_j, N_j); residual is the RMS deviation.

    Raises
    ------
    DomainError
        With fewer than four points.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 4 or pts.shape[1] != 2:
        raise DomainError("slope_fit needs at least four (x, N) points")
    x, n = pts[:, 0], pts[:, 1]
    a = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(a, n, rcond=None)
    resid = float(np.sqrt(np.mean((a @ coef - n) ** 2)))
    return SlopeFit(float(coef[0]), float(coef[1]), resid)


# ---------------------------------------------------------------------------
# Sweeps connecting three-body counts to the coefficient


@dataclass
class SweepResult:
    xs: list
    counts: list
    top_eigenvalues: list
    fit: SlopeFit
    nondecreasing: bool
    reports: list


def z_sweep(params: ModelParams, zs: Sequence[float], sector: str = "symmetric", grid_kwargs: Optional[dict] = None) -> SweepResult:
    """Counts N(0; z) at K = 0 on grids graded for each z, fitted against |log|z||."""
    from .three_body import eigen_count_N, graded_grid

    kw = {} if grid_kwargs is None else dict(grid_kwargs)
    reports = []
    for z in zs:
        if z >= 0:
            raise DomainError("z-sweep values must be negative")
        grid = graded_grid((0.0, 0.0, 0.0), abs(z), **kw)
        reports.append(eigen_count_N((0.0, 0.0, 0.0), z, params, grid, sector))
    xs = [abs(math.log(abs(z))) for z in zs]
    return _sweep_result(xs, reports)


def k_sweep(params: ModelParams, k_norms: Sequence[float], direction=(1.0, 0.0, 0.0), z_guard: float = 1e-10, sector: str = "symmetric", grid_kwargs: Optional[dict] = None) -> SweepResult:
    """Counts N(K; -z_guard) along |K| -> 0, fitted against |log|K||.

    The grid for each K is graded around the channel minimizer with the
    gap tau(K) + z_guard.
    """
    from .three_body import eigen_count_N, graded_grid, tau

    kw = {} if grid_kwargs is None else dict(grid_kwargs)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    reports = []
    for kn in k_norms:
        K = kn * d
        cm = tau(K, params)
        z = -z_guard
        grid = graded_grid(tuple(cm.minimizer), cm.tau - z, **kw)
        reports.append(eigen_count_N(K, z, params, grid, sector))
    xs = [abs(math.log(kn)) for kn in k_norms]
    return _sweep_result(xs, reports)


def _sweep_result(xs, reports) -> SweepResult:
    order = np.argsort(xs)
    xs = [float(xs[i]) for i in order]
    reports = [reports[i] for i in order]
    counts = [r.count for r in reports]
    fit = slope_fit(list(zip(xs, counts)))
    nondecr = all(b >= a for a, b in zip(counts, counts[1:]))
    return SweepResult(xs, counts, [r.top_eigenvalues for r in reports], fit, nondecr, reports)
