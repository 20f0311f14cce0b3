"""Torus arithmetic, the lattice dispersion and periodic quadrature on T^3.

Momenta live on the cube (-pi, pi]^3 with opposite faces identified.  All
integrals over T^3 used elsewhere in the package go through the rules in
this module: a tensor-product midpoint rule on uniform grids (optionally
half-cell offset), a radially graded composite rule around a chosen
centre, and odd-power Richardson extrapolation across grid doublings.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import i0e

from .errors import ConvergenceWarning, DomainError, SingularNodeError

TWO_PI = 2.0 * np.pi
TORUS_VOLUME = TWO_PI**3

# Points per block when integrands are evaluated on large grids.
_CHUNK = 1 << 18


def wrap(x):
    """Reduce coordinates modulo 2*pi into (-pi, pi].

    Works elementwise on scalars or arrays of any shape.

    Raises
    ------
    DomainError
        If any component is NaN or infinite.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("torus coordinates must be finite")
    y = np.pi - np.mod(np.pi - x, TWO_PI)
    # mod can round to exactly 2*pi for tiny negative arguments
    y = np.where(y <= -np.pi, y + TWO_PI, y)
    # values already in range are returned bit for bit
    return np.where((x > -np.pi) & (x <= np.pi), x, y)


@dataclass(frozen=True)
class TorusVec:
    """A point of T^3 with components in (-pi, pi]."""

    c1: float
    c2: float
    c3: float

    def __post_init__(self):
        for c in (self.c1, self.c2, self.c3):
            if not (-np.pi < c <= np.pi):
                raise DomainError(f"component {c!r} outside (-pi, pi]; use TorusVec.of")

    @classmethod
    def of(cls, raw) -> "TorusVec":
        c = wrap(np.asarray(raw, dtype=float).reshape(3))
        return cls(float(c[0]), float(c[1]), float(c[2]))

    @classmethod
    def zero(cls) -> "TorusVec":
        return cls(0.0, 0.0, 0.0)

    def __array__(self, dtype=None, copy=None):
        return np.array([self.c1, self.c2, self.c3], dtype=dtype or float)

    def __iter__(self):
        return iter((self.c1, self.c2, self.c3))

    def __add__(self, other):
        return TorusVec.of(np.asarray(self) + np.asarray(other, dtype=float))

    def __sub__(self, other):
        return TorusVec.of(np.asarray(self) - np.asarray(other, dtype=float))

    def __neg__(self):
        return TorusVec.of(-np.asarray(self))

    def __mul__(self, scalar):
        return TorusVec.of(float(scalar) * np.asarray(self))

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.linalg.norm(np.asarray(self)))

    def is_zero(self) -> bool:
        return self.c1 == 0.0 and self.c2 == 0.0 and self.c3 == 0.0


def as_points(p) -> np.ndarray:
    """Coerce a TorusVec, a 3-sequence or an (..., 3) array to a float array."""
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1:] != (3,):
        raise DomainError(f"expected trailing dimension 3, got shape {arr.shape}")
    return arr


def dispersion(p):
    """Single-particle lattice energy sum_i (1 - cos p_i), vectorized over (..., 3)."""
    p = as_points(p)
    return np.sum(1.0 - np.cos(p), axis=-1)


def hopping_coefficients(max_shell: int) -> dict:
    """Fourier coefficients of the dispersion on lattice sites |s_i| <= max_shell.

    The coefficient at site s is (2 pi)^-3 * integral of eps(p) exp(-i s.p) dp,
    computed with a uniform midpoint rule that is exact for the
    trigonometric degree involved.
    """
    if max_shell < 1:
        raise DomainError("max_shell must be at least 1")
    n = 2 * max_shell + 2
    t = -np.pi + (np.arange(n) + 0.5) * (TWO_PI / n)
    grid = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    eps = dispersion(grid)
    coeffs = {}
    for s in itertools.product(range(-max_shell, max_shell + 1), repeat=3):
        phase = np.cos(grid @ np.asarray(s, dtype=float))
        # eps is even, so the sine part vanishes
        coeffs[s] = float(np.mean(eps * phase))
    return coeffs


@dataclass(frozen=True)
class RadialLog:
    """Geometric radial refinement around a centre point.

    The cube of half-width ``cube_cells`` uniform cells around ``center`` is
    replaced by six pyramids with apex at the centre.  Each pyramid uses a
    composite Gauss-Legendre rule in the radial variable on cells whose
    edges grow geometrically from ``inner_radius`` to the cube face
    (``levels`` cells plus the innermost one) and a tensor Gauss-Legendre
    rule of order ``face_order`` on the face.  ``cube_cells=None`` covers
    the whole torus with the pyramids.
    """

    center: tuple = (0.0, 0.0, 0.0)
    inner_radius: float = 1e-3
    levels: int = 12
    cube_cells: Optional[int] = None
    radial_order: int = 2
    face_order: int = 3

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in wrap(np.asarray(self.center, dtype=float))))
        if self.inner_radius <= 0:
            raise DomainError("inner_radius must be positive")
        if self.levels < 0 or self.radial_order < 1 or self.face_order < 1:
            raise DomainError("levels >= 0, radial_order >= 1 and face_order >= 1 required")


@dataclass(frozen=True)
class GridSpec:
    """Description of a quadrature grid on T^3.

    ``origin`` translates the uniform lattice; with ``offset=True`` the lattice
    is shifted by half a cell so the origin sits on a cell corner and is never
    a node.  When ``grading`` is set, the uniform lattice is centred on the
    grading centre and refined there (see `RadialLog`).
    """

    n_per_axis: int
    offset: bool = True
    grading: Optional[RadialLog] = None
    origin: tuple = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        if int(self.n_per_axis) != self.n_per_axis or self.n_per_axis < 1:
            raise DomainError("n_per_axis must be a positive integer")
        object.__setattr__(self, "origin", tuple(float(c) for c in wrap(np.asarray(self.origin, dtype=float))))
        if self.grading is not None and not self.offset:
            raise DomainError("graded grids require offset=True")

    def doubled(self) -> "GridSpec":
        """Same region, twice the uniform resolution and twice the radial levels."""
        g = self.grading
        if g is not None:
            cube = None if g.cube_cells is None else 2 * g.cube_cells
            g = replace(g, levels=2 * g.levels, cube_cells=cube)
        return replace(self, n_per_axis=2 * self.n_per_axis, grading=g)


@dataclass
class QuadratureEstimate:
    """Refined integral value with the difference of the two finest levels."""

    value: float
    error_estimate: float
    levels_used: list
    raw_values: list
    converged: bool


def _axis_nodes(n: int, offset: bool) -> np.ndarray:
    # cell corners sit on multiples of h, so an offset grid never holds 0
    h = TWO_PI / n
    shift = 0.5 if offset else 0.0
    return np.sort(wrap((np.arange(n) + shift) * h))


def _gauss_cells(edges: np.ndarray, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (a + b) + 0.5 * (b - a) * x[None, :]
    weights = 0.5 * (b - a) * w[None, :]
    return nodes.ravel(), weights.ravel()


def _pyramid_nodes(center: np.ndarray, half_width: float, g: RadialLog):
    t0 = g.inner_radius / half_width
    if not 0 < t0 < 1:
        raise DomainError("inner_radius must be smaller than the refined cube half-width")
    edges = np.concatenate([[0.0], t0 * (1.0 / t0) ** (np.arange(g.levels + 1) / max(g.levels, 1))])
    if g.levels == 0:
        edges = np.array([0.0, 1.0])
    t, wt = _gauss_cells(edges, g.radial_order)
    u, wu = np.polynomial.legendre.leggauss(g.face_order)
    uu, vv = np.meshgrid(u, u, indexing="ij")
    wf = np.outer(wu, wu).ravel()
    uu, vv = uu.ravel(), vv.ravel()
    one = np.ones_like(uu)
    faces = []
    for axis in range(3):
        for sign in (1.0, -1.0):
            d = np.empty((uu.size, 3))
            d[:, axis] = sign * one
            others = [a for a in range(3) if a != axis]
            d[:, others[0]] = uu
            d[:, others[1]] = vv
            faces.append(d)
    dirs = np.concatenate(faces)
    wdir = np.tile(wf, 6)
    pts = center + half_width * t[:, None, None] * dirs[None, :, :]
    w = (half_width**3) * (t**2 * wt)[:, None] * wdir[None, :]
    return pts.reshape(-1, 3), w.ravel()


def grid_nodes(grid: GridSpec):
    """Nodes (N, 3) and positive weights (N,) of a grid; weights sum to (2 pi)^3."""
    n = grid.n_per_axis
    h = TWO_PI / n
    g = grid.grading
    origin = np.asarray(g.center if g is not None else grid.origin)
    # local offsets relative to the origin, in [-pi, pi)
    t = _axis_nodes(n, grid.offset)
    local = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    weights = np.full(local.shape[0], h**3)
    if g is None:
        return wrap(local + origin), weights
    m = g.cube_cells
    if m is None or 2 * m >= n:
        pts, w = _pyramid_nodes(np.zeros(3), np.pi, g)
        return wrap(pts + origin), w
    half = m * h
    keep = np.any(np.abs(local) > half, axis=1)
    pts, w = _pyramid_nodes(np.zeros(3), half, g)
    nodes = np.concatenate([local[keep], pts])
    return wrap(nodes + origin), np.concatenate([weights[keep], w])


def _integrate_nodes(f, nodes, weights, dim):
    if dim == 1:
        parts = []
        for start in range(0, nodes.shape[0], _CHUNK):
            sl = slice(start, start + _CHUNK)
            vals = np.asarray(f(nodes[sl]), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise SingularNodeError("integrand is not finite at a node; use an offset grid")
            parts.append(np.sum(vals * weights[sl]))
        return float(np.sum(parts))
    if dim == 2:
        rows = max(1, _CHUNK // nodes.shape[0])
        parts = []
        for start in range(0, nodes.shape[0], rows):
            sl = slice(start, start + rows)
            vals = np.asarray(f(nodes[sl, None, :], nodes[None, :, :]), dtype=float)
            if not np.all(np.isfinite(vals)):
                raise SingularNodeError("integrand is not finite at a node; use an offset grid")
            parts.append(np.sum(weights[sl, None] * vals * weights[None, :]))
        return float(np.sum(parts))
    raise DomainError("only dim 1 (T^3) and dim 2 (T^3 x T^3) are supported")


def quadrature(f: Callable, grid: GridSpec, dim: int = 1) -> float:
    """Integrate ``f`` over (T^3)^dim on ``grid``.

    ``f`` receives an (M, 3) array of points (dim=1) or two broadcastable
    arrays ``p, q`` (dim=2) and returns the integrand values.  On uniform
    grids this is the tensor midpoint rule, exact for trigonometric
    polynomials of degree below ``n_per_axis`` in each coordinate.
    """
    nodes, weights = grid_nodes(grid)
    return _integrate_nodes(f, nodes, weights, dim)


def richardson(values: Sequence[float], hs: Sequence[float], exponents: Sequence[int]) -> float:
    """Extrapolate to h = 0 assuming error terms h**e for the given exponents."""
    k = len(values)
    if k == 1:
        return float(values[0])
    h = np.asarray(hs, dtype=float)
    cols = [np.ones(k)] + [h**e for e in exponents[: k - 1]]
    a = np.column_stack(cols)
    return float(np.linalg.solve(a, np.asarray(values, dtype=float))[0])


def refine(
    f: Callable,
    tol: float,
    n_start: int = 16,
    n_max: int = 256,
    *,
    dim: int = 1,
    origin=(0.0, 0.0, 0.0),
    exponents: Sequence[int] = (1, 3, 5, 7),
    min_levels: int = 2,
) -> QuadratureEstimate:
    """Double an offset uniform grid until successive values agree to ``tol``.

    Smooth periodic integrands converge spectrally, and the raw level
    values are used as they are.  Offset midpoint sums of integrands with a
    |q|^-2 singularity at a cell corner have error expansions in odd
    powers of the spacing instead, so the raw values are also combined by
    Richardson extrapolation in ``exponents``.  At each level the sequence
    (raw or extrapolated) whose two finest entries differ least is used;
    that difference is the error estimate.  When the budget ``n_max`` is
    exhausted a `ConvergenceWarning` is emitted and the returned estimate
    carries ``converged=False``.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    ns, raws, extrap = [], [], []
    n = int(n_start)
    best = (float("nan"), float("inf"))
    while n <= n_max:
        raws.append(quadrature(f, GridSpec(n, offset=True, origin=origin), dim=dim))
        ns.append(n)
        window = min(len(raws), len(exponents) + 1)
        extrap.append(richardson(raws[-window:], [TWO_PI / m for m in ns[-window:]], exponents))
        if len(raws) >= min_levels:
            candidates = [(raws[-1], abs(raws[-1] - raws[-2])), (extrap[-1], abs(extrap[-1] - extrap[-2]))]
            best = min(candidates, key=lambda c: c[1])
            if best[1] < tol:
                return QuadratureEstimate(best[0], best[1], ns, raws, True)
        n *= 2
    if len(raws) < min_levels:
        best = (raws[-1], float("inf"))
    warnings.warn(f"refinement stopped at n={ns[-1]} with error {best[1]:.3e} > tol {tol:.1e}", ConvergenceWarning)
    return QuadratureEstimate(best[0], best[1], ns, raws, False)


# ---------------------------------------------------------------------------
# Anisotropic lattice Green function by the Bessel (Laplace) representation.

_GL8 = np.polynomial.legendre.leggauss(8)


def _log_panels(panels: int):
    x, w = _GL8
    edges = np.linspace(0.0, 1.0, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    half = 0.5 / panels
    return (mid + half * x[None, :]).ravel(), np.tile(half * w, panels)


def lattice_green(a, s, panels: int = 64):
    """(2 pi)^-3 * integral over T^3 of dq / (sum_j a_j (1 - cos q_j) + s).

    Uses 1/X = int_0^inf exp(-tX) dt and the Bessel identity
    (2 pi)^-1 int exp(t a cos q) dq = I_0(a t), which turns the 3D integral
    into int_0^inf exp(-s t) prod_j i0e(a_j t) dt.  The t-integral is done
    in log t with composite Gauss-Legendre panels; for s = 0 the algebraic
    tail beyond t = 1e6 / min(a) is added from the large-argument
    expansion of i0e.  Vectorized: ``a`` is (..., 3), ``s`` broadcasts
    against ``a[..., 0]``.  Returns +inf for s = 0 when fewer than three
    a_j are positive (the integral diverges).
    """
    a = np.asarray(a, dtype=float)
    s = np.asarray(s, dtype=float)
    shape = np.broadcast_shapes(a.shape[:-1], s.shape)
    a = np.broadcast_to(a, shape + (3,)).reshape(-1, 3)
    s = np.broadcast_to(s, shape).reshape(-1)
    if np.any(s < 0) or np.any(a < 0):
        raise DomainError("lattice_green needs a_j >= 0 and s >= 0")
    out = np.empty(s.shape)
    at_zero = s == 0.0
    positive = a > 0
    amin = np.where(positive, a, np.inf).min(axis=1)
    diverge = at_zero & (positive.sum(axis=1) < 3)
    u_lo = math.log(1e-15)
    t_hi = np.where(at_zero, 1e6 / np.where(np.isfinite(amin), amin, 1.0), 60.0 / np.where(at_zero, 1.0, s))
    u_hi = np.log(t_hi)
    xi, wi = _log_panels(panels)
    block = max(1, (1 << 20) // xi.size)
    for start in range(0, s.size, block):
        sl = slice(start, start + block)
        span = (u_hi[sl] - u_lo)[:, None]
        t = np.exp(u_lo + span * xi[None, :])
        integrand = t * np.exp(-s[sl, None] * t) * np.prod(i0e(a[sl, :, None] * t[:, None, :]), axis=1)
        out[sl] = np.sum(integrand * wi[None, :], axis=1) * span[:, 0]
    # algebraic tail for s = 0: prod (2 pi a_j t)^-1/2 (1 + 1/(8 a_j t) + 9/(128 a_j^2 t^2))
    if np.any(at_zero & ~diverge):
        idx = at_zero & ~diverge
        aa = a[idx]
        big_t = t_hi[idx]
        inv = 1.0 / aa
        c0 = np.prod(TWO_PI * aa, axis=1) ** -0.5
        c1 = inv.sum(axis=1) / 8.0
        c2 = 9.0 / 128.0 * (inv**2).sum(axis=1) + ((inv.sum(axis=1)) ** 2 - (inv**2).sum(axis=1)) / 128.0
        out[idx] += c0 * (2.0 * big_t**-0.5 + c1 * (2.0 / 3.0) * big_t**-1.5 + c2 * 0.4 * big_t**-2.5)
    out[diverge] = np.inf
    return out.reshape(shape)
