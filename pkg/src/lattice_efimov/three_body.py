"""Three-body layer: fiber energies, essential spectrum and eigenvalue counts.

Two identical fermions (dispersion eps) interact with a boson (dispersion
gamma * eps) through zero-range pair forces of strength v.  At total
quasi-momentum K the fiber has kinetic energy

    E(K; p, q) = eps(p) + eps(q) + gamma * eps(K - p - q)

for fermion momenta p, q.  The number of eigenvalues below z < tau(K) is
counted as the number of eigenvalues above 1 of the one-variable
Birman-Schwinger operator

    T(p, q) = sign * v (2 pi)^-3 Delta(K, p, z)^-1/2 Delta(K, q, z)^-1/2 / (E(K; p, q) - z),
    Delta(K, p, z) = Delta_pair(K - p, z - eps(p)),

with sign = -1 on functions antisymmetric under exchange of the two
fermions and sign = +1 on the symmetric sector.  The sector dependence is
checked at the discrete level against a direct diagonalization of the
fiber (`direct_count_oracle`).
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eigvalsh
from scipy.optimize import brentq, minimize

from .errors import AmbiguousCountWarning, ConsistencyError, DomainError
from .torus import TORUS_VOLUME, GridSpec, RadialLog, TorusVec, as_points, dispersion, grid_nodes, wrap
from .two_body import (
    ModelParams,
    band_bottom,
    band_top,
    bound_state_energies,
    determinant_values,
)

SECTORS = ("antisymmetric", "symmetric")


def sector_sign(sector: str) -> float:
    """Overall sign of the Birman-Schwinger kernel in a permutation sector."""
    if sector == "antisymmetric":
        return -1.0
    if sector == "symmetric":
        return 1.0
    raise DomainError(f"sector must be one of {SECTORS}, got {sector!r}")


def _vec(K) -> np.ndarray:
    return np.asarray(K if isinstance(K, TorusVec) else TorusVec.of(K), dtype=float)


def total_energy(K, p, q, params: ModelParams):
    """E(K; p, q) = eps(p) + eps(q) + gamma eps(K - p - q), broadcasting over p and q."""
    K = as_points(K)
    p = as_points(p)
    q = as_points(q)
    return dispersion(p) + dispersion(q) + params.gamma * dispersion(K - p - q)


def _pair_matrix(K, nodes, params: ModelParams):
    """Matrix E(K; p_i, p_j) built axis by axis to keep memory at one N x N array."""
    e = dispersion(nodes)
    out = e[:, None] + e[None, :]
    a = K[None, :] - nodes
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(nodes), np.sin(nodes)
    out += 3.0 * params.gamma
    for j in range(3):
        # cos(K - p - q) = cos(K - p) cos q + sin(K - p) sin q
        out -= params.gamma * (np.outer(ca[:, j], cb[:, j]) + np.outer(sa[:, j], sb[:, j]))
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# Band edges


@dataclass(frozen=True)
class BandEdges:
    E_min: float
    E_max: float
    argmin: tuple
    argmax: tuple


def _axis_energy(x, kj, gamma):
    p, q = x
    return (1 - math.cos(p)) + (1 - math.cos(q)) + gamma * (1 - math.cos(kj - p - q))


def _axis_grad(x, kj, gamma):
    p, q = x
    s = math.sin(kj - p - q)
    return np.array([math.sin(p) - gamma * s, math.sin(q) - gamma * s])


def _axis_extremum(kj, gamma, sign, n_scan, n_starts=4):
    t = -np.pi + np.arange(n_scan) * (2 * np.pi / n_scan)
    p, q = np.meshgrid(t, t, indexing="ij")
    vals = sign * ((1 - np.cos(p)) + (1 - np.cos(q)) + gamma * (1 - np.cos(kj - p - q)))
    order = np.argsort(vals, axis=None)[:n_starts]
    best = None
    for idx in order:
        i, j = np.unravel_index(idx, vals.shape)
        res = minimize(
            lambda x: sign * _axis_energy(x, kj, gamma),
            np.array([p[i, j], q[i, j]]),
            jac=lambda x: sign * _axis_grad(x, kj, gamma),
            method="BFGS",
            options={"gtol": 1e-13},
        )
        cand = (sign * res.fun, tuple(wrap(np.r_[res.x, 0.0])[:2]))
        raw = sign * vals[i, j]
        if sign * cand[0] > sign * raw:
            cand = (raw, (float(p[i, j]), float(q[i, j])))
        if best is None or sign * cand[0] < sign * best[0]:
            best = cand
    return best


def band_edges(K, params: ModelParams, n_scan: int = 64) -> BandEdges:
    """Minimum and maximum of E(K; p, q) over (p, q) in T^3 x T^3.

    E splits into a sum over coordinate axes of
    (1 - cos p_j) + (1 - cos q_j) + gamma (1 - cos(K_j - p_j - q_j)), so the
    six-dimensional search reduces to three two-dimensional ones, each a
    grid scan followed by BFGS polishing from the best cells.
    """
    K = _vec(K)
    lo, hi, amin, amax = 0.0, 0.0, [], []
    for kj in K:
        vmin, xmin = _axis_extremum(kj, params.gamma, 1.0, n_scan)
        vmax, xmax = _axis_extremum(kj, params.gamma, -1.0, n_scan)
        lo += vmin
        hi += vmax
        amin.append(xmin)
        amax.append(xmax)
    argmin = (TorusVec.of([x[0] for x in amin]), TorusVec.of([x[1] for x in amin]))
    argmax = (TorusVec.of([x[0] for x in amax]), TorusVec.of([x[1] for x in amax]))
    return BandEdges(float(lo), float(hi), argmin, argmax)


# ---------------------------------------------------------------------------
# Channel minimum tau(K)


@dataclass(frozen=True)
class ChannelMin:
    K: TorusVec
    tau: float
    minimizer: TorusVec
    hessian: np.ndarray
    hessian_positive: bool
    below_band: Optional[bool] = None
    E_min: Optional[float] = None


def pair_bound_energy(k, params: ModelParams, xtol: float = 1e-14) -> float:
    """z(k) for a single pair momentum by Brent's method (z(0) = 0).

    Used inside minimizations where many accurate values are needed;
    `two_body.bound_state_energy` is the bisection reference.
    """
    k = np.asarray(k, dtype=float)
    m = float(band_bottom(k, params))
    if m == 0.0:
        return 0.0
    f = lambda z: float(determinant_values(k, z, params))
    lo = -10.0 * (1.0 + m)
    return float(brentq(f, lo, m, xtol=xtol, rtol=4 * np.finfo(float).eps))


def channel_energy(K, p, params: ModelParams) -> float:
    """Z(K, p) = eps(p) + z(K - p)."""
    K = _vec(K)
    p = np.asarray(p, dtype=float)
    return float(dispersion(p)) + pair_bound_energy(wrap(K - p), params)


def tau(K, params: ModelParams, tol: float = 1e-10, n_coarse: int = 8, hess_step: float = 1e-3) -> ChannelMin:
    """Bottom of the essential spectrum, tau(K) = min_p eps(p) + z(K - p).

    A coarse lattice scan (including p = 0 and p = K) picks starting points
    for a Nelder-Mead polish; the Hessian of Z at the minimizer comes from
    central differences.  The result records whether tau lies below the
    band minimum E_min(K) and whether the Hessian is positive definite.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    Kv = TorusVec.of(K) if not isinstance(K, TorusVec) else K
    K = np.asarray(Kv)
    t = -np.pi + np.arange(n_coarse) * (2 * np.pi / n_coarse)
    grid = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = np.concatenate([grid, [np.zeros(3), K, 0.5 * K]])
    pair_k = wrap(K[None, :] - grid)
    zs = bound_state_energies(pair_k, params, tol=1e-8, panels=64)
    vals = dispersion(grid) + zs
    starts = grid[np.argsort(vals)[:3]]
    best_p, best_v = None, math.inf
    for s0 in starts:
        res = minimize(
            lambda x: channel_energy(K, x, params),
            s0,
            method="Nelder-Mead",
            options={"xatol": 1e-9, "fatol": tol, "maxiter": 4000, "initial_simplex": s0 + 0.05 * np.vstack([np.zeros(3), np.eye(3)])},
        )
        if res.fun < best_v:
            best_p, best_v = res.x, float(res.fun)
    best_p = wrap(best_p)
    hess = _hessian(lambda x: channel_energy(K, x, params), best_p, hess_step)
    pos = bool(np.all(np.linalg.eigvalsh(hess) > 0))
    if not pos:
        warnings.warn(f"channel Hessian at K={tuple(K)} is not positive definite", RuntimeWarning)
    return ChannelMin(Kv, best_v, TorusVec.of(best_p), hess, pos)


def _hessian(f, x, h):
    x = np.asarray(x, dtype=float)
    n = len(x)
    out = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        out[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h**2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h
            out[i, j] = out[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h**2)
    return out


def tau_checked(K, params: ModelParams, tol: float = 1e-10) -> ChannelMin:
    """`tau` together with the comparison against E_min(K)."""
    cm = tau(K, params, tol)
    edges = band_edges(K, params)
    return ChannelMin(cm.K, cm.tau, cm.minimizer, cm.hessian, cm.hessian_positive, cm.tau < edges.E_min, edges.E_min)


def essential_spectrum(K, params: ModelParams, tol: float = 1e-10):
    """Interval [tau(K), E_max(K)] of the essential spectrum of the fiber."""
    return tau(K, params, tol).tau, band_edges(K, params).E_max


def channel_spectrum(K, p, params: ModelParams):
    """Spectrum of the channel fiber at p: the point z(K-p)+eps(p) and the band [m+eps, M+eps]."""
    K = _vec(K)
    p = np.asarray(p, dtype=float)
    k = wrap(K - p)
    e = float(dispersion(p))
    return pair_bound_energy(k, params) + e, float(band_bottom(k, params)) + e, float(band_top(k, params)) + e


# ---------------------------------------------------------------------------
# Birman-Schwinger kernel


def delta_shifted(K, p, z: float, params: ModelParams, panels: int = 128, check: bool = True):
    """Delta(K, p, z) = Delta_pair(K - p, z - eps(p)) for p of shape (..., 3).

    With ``check`` a nonpositive value raises `ConsistencyError`: for z
    below tau(K) all values are positive, so a violation means the
    caller's z is not below tau or the inputs are inconsistent.
    """
    K = _vec(K)
    p = as_points(p)
    vals = determinant_values(wrap(K - p), z - dispersion(p), params, panels)
    if check and np.any(vals <= 0):
        raise ConsistencyError("nonpositive shifted determinant: z is not below tau(K)")
    return vals


@dataclass
class SymmetricKernel:
    """Nystrom table: entry (i, j) is sqrt(w_i w_j) kernel(p_i, p_j)."""

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class CountReport:
    K: TorusVec
    z: float
    mu_level: float
    count: int
    n_nodes: int
    margin: float
    ambiguous: bool
    sector: str
    top_eigenvalues: np.ndarray
    grid: Optional[GridSpec] = None
    seconds: float = 0.0


def _grid_delta(energies, weights, z, params):
    # discrete analogue of delta_shifted on the same nodes
    return 1.0 - params.v_gamma / TORUS_VOLUME * np.sum(weights[None, :] / (energies - z), axis=1)


def bs_assemble(K, z: float, params: ModelParams, grid: GridSpec, sector: str = "antisymmetric", delta_route: str = "exact") -> SymmetricKernel:
    """Nystrom table of the Birman-Schwinger operator on ``grid``.

    ``delta_route="exact"`` evaluates Delta(K, p, z) by the Bessel route;
    ``"grid"`` uses the quadrature sum on the same nodes, which makes the
    resulting count identical to that of the discretized fiber.

    Raises
    ------
    DomainError
        If E(K; p_i, p_j) <= z at some node pair.
    ConsistencyError
        If a Delta value at a node is not positive.
    """
    sign = sector_sign(sector)
    K = _vec(K)
    nodes, weights = grid_nodes(grid)
    energies = _pair_matrix(K, nodes, params)
    gap = energies - z
    if np.any(gap <= 0):
        raise DomainError("z is not below E(K; p, q) at every node pair")
    if delta_route == "exact":
        d = delta_shifted(K, nodes, z, params)
    elif delta_route == "grid":
        d = _grid_delta(energies, weights, z, params)
        if np.any(d <= 0):
            raise ConsistencyError("nonpositive discrete shifted determinant")
    else:
        raise DomainError("delta_route must be 'exact' or 'grid'")
    scale = np.sqrt(weights / d)
    values = sign * params.v_gamma / TORUS_VOLUME * (scale[:, None] * scale[None, :]) / gap
    values = 0.5 * (values + values.T)
    meta = {"K": tuple(K), "z": z, "sector": sector, "delta_route": delta_route, "delta_min": float(d.min())}
    return SymmetricKernel(nodes, weights, values, meta)


def count_above(kernel: SymmetricKernel, mu: float, guard_rel: float = 1e-8) -> CountReport:
    """Number of eigenvalues of the kernel table strictly above ``mu``.

    Eigenvalues within ``guard_rel`` times the spectral radius of ``mu``
    make the count ambiguous; an `AmbiguousCountWarning` is emitted and the
    report is flagged.
    """
    start = time.perf_counter()
    ev = eigvalsh(kernel.values, check_finite=True)
    radius = float(np.max(np.abs(ev))) if ev.size else 0.0
    guard = guard_rel * radius
    dist = np.abs(ev - mu)
    margin = float(dist.min()) if ev.size else math.inf
    ambiguous = margin <= guard
    if ambiguous:
        warnings.warn(f"eigenvalue within {guard:.2e} of the level {mu}", AmbiguousCountWarning)
    count = int(np.sum(ev > mu + guard))
    meta = kernel.meta
    return CountReport(
        TorusVec.of(meta.get("K", (0.0, 0.0, 0.0))),
        float(meta.get("z", math.nan)),
        float(mu),
        count,
        len(ev),
        margin,
        bool(ambiguous),
        meta.get("sector", ""),
        ev[-min(8, ev.size):][::-1].copy(),
        seconds=time.perf_counter() - start,
    )


def eigen_count_N(K, z: float, params: ModelParams, grid: GridSpec, sector: str = "antisymmetric", delta_route: str = "exact") -> CountReport:
    """Eigenvalue count below z of the fiber, as eigenvalues above 1 of the kernel."""
    start = time.perf_counter()
    report = count_above(bs_assemble(K, z, params, grid, sector, delta_route), 1.0)
    report.grid = grid
    report.seconds = time.perf_counter() - start
    return report


def graded_grid(center, z_gap: float, n_per_axis: int = 8, cube_cells: int = 1, levels_per_decade: float = 3.0, radial_order: int = 2, face_order: int = 3) -> GridSpec:
    """Uniform offset grid refined radially around ``center``.

    The inner radius is max(1e-4, sqrt(z_gap) / 10) and the geometric
    radial cells span from it to the refined cube with about
    ``levels_per_decade`` cells per decade.
    """
    h = 2 * np.pi / n_per_axis
    half = min(cube_cells * h, np.pi) if 2 * cube_cells < n_per_axis else np.pi
    inner = max(1e-4, math.sqrt(abs(z_gap)) / 10.0)
    inner = min(inner, 0.5 * half)
    levels = max(1, int(math.ceil(levels_per_decade * math.log10(half / inner))))
    return GridSpec(
        n_per_axis,
        offset=True,
        grading=RadialLog(tuple(center), inner, levels, cube_cells, radial_order, face_order),
    )


# ---------------------------------------------------------------------------
# Direct diagonalization oracle


def _sector_basis(m: int, sector: str):
    if sector == "antisymmetric":
        i, j = np.triu_indices(m, 1)
        alpha = np.full(len(i), 1.0 / math.sqrt(2.0))
    else:
        i, j = np.triu_indices(m, 0)
        alpha = np.where(i == j, 0.5, 1.0 / math.sqrt(2.0))
    return i, j, alpha


def direct_spectrum(K, params: ModelParams, n: int, sector: str = "antisymmetric") -> np.ndarray:
    """Eigenvalues of the fiber discretized on the offset n-grid in one sector.

    Wave functions f(p, q) of the two fermion momenta live on pairs of
    grid nodes; the boson carries K - p - q.  The kinetic part is diagonal
    and each pair force averages over one fermion momentum with weight
    w/(2 pi)^3.  On the (anti)symmetric basis
    alpha_ij (e_ij +- e_ji) the two averaging terms combine to
    2 alpha_ij alpha_kl c (d_ik +- d_il +- d_jk + d_jl).
    """
    if not 1 <= n <= 5:
        raise DomainError("direct oracle supports n <= 5 per axis")
    sign = sector_sign(sector)
    K = _vec(K)
    nodes, weights = grid_nodes(GridSpec(n, offset=True))
    m = len(nodes)
    energies = _pair_matrix(K, nodes, params)
    i, j, alpha = _sector_basis(m, sector)
    c = float(weights[0]) / TORUS_VOLUME
    eq = lambda a, b: (a[:, None] == b[None, :]).astype(float)
    overlap = eq(i, i) + sign * eq(i, j) + sign * eq(j, i) + eq(j, j)
    h = -params.v_gamma * 2.0 * c * (alpha[:, None] * alpha[None, :]) * overlap
    h[np.diag_indices_from(h)] += energies[i, j]
    return eigvalsh(h)


def direct_count_oracle(K, z: float, params: ModelParams, n: int = 4, sector: str = "antisymmetric") -> int:
    """Number of eigenvalues below z of the directly discretized fiber."""
    return int(np.sum(direct_spectrum(K, params, n, sector) < z))


def oracle_comparison(K, z: float, params: ModelParams, n: int = 4, sector: str = "antisymmetric") -> dict:
    """Direct count, Birman-Schwinger count on the same nodes and their margins."""
    ev = direct_spectrum(K, params, n, sector)
    direct = int(np.sum(ev < z))
    rep = eigen_count_N(K, z, params, GridSpec(n, offset=True), sector, delta_route="grid")
    return {
        "direct": direct,
        "bs": rep.count,
        "direct_margin": float(np.min(np.abs(ev - z))),
        "bs_margin": rep.margin,
        "agree": direct == rep.count,
        "ambiguous": rep.ambiguous,
    }


# ---------------------------------------------------------------------------
# Cutoff comparison kernel


def threshold_scale(K, z: float, params: ModelParams) -> float:
    """K^2 / (2 M_gamma) + |z|, the energy scale of the near-threshold region."""
    K = _vec(K)
    return float(K @ K) / (2.0 * params.M_gamma) + abs(z)


def cutoff_kernel(delta: float, K, z: float, params: ModelParams, grid: GridSpec, sector: str = "antisymmetric") -> SymmetricKernel:
    """Nystrom table of the small-momentum model of the kernel, cut off at |p| < delta.

    The model replaces E - z and Delta by their leading behaviour near
    p = q = 0 with scale zeta = K^2/(2 M_gamma) + |z|:
    D (n p^2 + 2 zeta)^-1/4 (n q^2 + 2 zeta)^-1/4 / ((1+g) q^2 + 2 g p.q + (1+g) p^2 + 2 zeta).
    """
    if not 0 < delta < np.pi:
        raise DomainError("delta must lie in (0, pi)")
    sign = sector_sign(sector)
    K = _vec(K)
    zeta = threshold_scale(K, z, params)
    nodes, weights = grid_nodes(grid)
    g = params.gamma
    p2 = np.sum(nodes**2, axis=1)
    inside = p2 < delta**2
    f = np.where(inside, np.sqrt(weights) * (params.n_gamma * p2 + 2 * zeta) ** -0.25, 0.0)
    den = (1 + g) * (p2[:, None] + p2[None, :]) + 2 * g * (nodes @ nodes.T) + 2 * zeta
    values = sign * params.D_gamma * np.outer(f, f) / den
    values = 0.5 * (values + values.T)
    return SymmetricKernel(nodes, weights, values, {"K": tuple(K), "z": z, "sector": sector, "delta": delta})


def hs_difference(K, z: float, delta: float, params: ModelParams, grid: GridSpec, sector: str = "antisymmetric") -> float:
    """Frobenius norm of the kernel table minus its cutoff model on ``grid``."""
    full = bs_assemble(K, z, params, grid, sector)
    cut = cutoff_kernel(delta, K, z, params, grid, sector)
    return float(np.linalg.norm(full.values - cut.values))
