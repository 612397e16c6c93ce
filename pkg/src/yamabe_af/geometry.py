"""Curvature kernels for rotationally symmetric, conformally flat metrics.

A metric is represented by a positive conformal factor ``phi`` on a
:class:`~yamabe_af.grid.RadialGrid`, meaning g = phi^(4/(n-2)) * delta.

The flat Laplacian is assembled in flux form,

    Delta_0 f_i = (Phi_{i+1/2} - Phi_{i-1/2}) / V_i,

with Phi_{i+1/2} = m^(n-1) (f_{i+1} - f_i) / (r_{i+1} - r_i) at the face
midpoint m, a zero flux through the origin face (even reflection) and the
last face flux continued through R_max (harmonic closure, so the Laplacian
of a pure 1 + A r^(2-n) tail vanishes at the last node).  At the first node
this reduces to the n f''(0) limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridError, RadialGrid


class GeometryDomainError(ValueError):
    """A conformal factor or weight was not strictly positive."""


@dataclass(frozen=True)
class DimensionalConstants:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"dimension must be an integer >= 3, got {self.n}")

    @property
    def N(self) -> float:
        return (self.n + 2) / (self.n - 2)

    @property
    def a(self) -> float:
        return (self.n - 2) / (4 * (self.n - 1))

    @property
    def c_n(self) -> float:
        """u-time / geometric-time."""
        return (self.n - 1) * (self.n + 2) / (self.n - 2)

    @property
    def omega(self) -> float:
        """Area of the unit (n-1)-sphere."""
        return 2.0 * math.pi ** (self.n / 2) / math.gamma(self.n / 2)

    @property
    def metric_power(self) -> float:
        return 4.0 / (self.n - 2)

    @property
    def volume_power(self) -> float:
        return 2.0 * self.n / (self.n - 2)


def _check_positive(phi, name="conformal factor"):
    phi = np.asarray(phi, dtype=float)
    if not np.all(phi > 0.0) or not np.all(np.isfinite(phi)):
        bad = int(np.argmin(np.where(np.isfinite(phi), phi, -np.inf)))
        raise GeometryDomainError(f"{name} must be positive (node {bad}: {phi[bad]!r})")
    return phi


def _check_length(f, grid):
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.size,):
        raise GridError(f"field has shape {f.shape}, grid has {grid.size} nodes")
    return f


def flat_radial_laplacian(f, grid: RadialGrid, c: DimensionalConstants) -> np.ndarray:
    f = _check_length(f, grid)
    n = c.n
    phi = np.empty(grid.size + 1)
    phi[0] = 0.0
    phi[1:-1] = grid.fv_flux(f, n)
    phi[-1] = phi[-2]
    return np.diff(phi) / grid.control_volumes(n)


def conformal_laplace_beltrami(f, phi, grid: RadialGrid, c: DimensionalConstants) -> np.ndarray:
    """Laplace-Beltrami operator of phi^(4/(n-2)) delta applied to ``f``.

    Uses phi^(-4/(n-2)) (Delta_0 f + 2 (phi'/phi) f'); log phi is never
    differenced.
    """
    f = _check_length(f, grid)
    phi = _check_positive(_check_length(phi, grid))
    df, _ = grid.derivatives(f)
    dphi, _ = grid.derivatives(phi)
    lap = flat_radial_laplacian(f, grid, c)
    return phi ** (-c.metric_power) * (lap + 2.0 * dphi / phi * df)


def scalar_curvature(phi, grid: RadialGrid, c: DimensionalConstants) -> np.ndarray:
    """R = -(1/a) phi^(-N) Delta_0 phi."""
    phi = _check_positive(_check_length(phi, grid))
    lap = flat_radial_laplacian(phi, grid, c)
    return -lap * phi ** (-c.N) / c.a


def conformal_laplacian(f, w0, grid: RadialGrid, c: DimensionalConstants,
                        R0=None) -> np.ndarray:
    """L_{g0} f = Delta_{g0} f - a R_{g0} f, assembled term by term.

    ``R0`` overrides the numerically computed R_{g0} (e.g. an exact zero
    for scalar-flat data).
    """
    w0 = _check_positive(_check_length(w0, grid), "w0")
    f = _check_length(f, grid)
    lb = conformal_laplace_beltrami(f, w0, grid, c)
    if R0 is None:
        R0 = scalar_curvature(w0, grid, c)
    return lb - c.a * np.asarray(R0, dtype=float) * f


def conformal_laplacian_covariant(f, w0, grid: RadialGrid, c: DimensionalConstants) -> np.ndarray:
    """L_{g0} f through conformal covariance: w0^(-N) Delta_0(w0 f)."""
    w0 = _check_positive(_check_length(w0, grid), "w0")
    f = _check_length(f, grid)
    return w0 ** (-c.N) * flat_radial_laplacian(w0 * f, grid, c)


def ricci_eigenvalues(phi, grid: RadialGrid, c: DimensionalConstants):
    """Radial and tangential Ricci eigenvalues of phi^(4/(n-2)) delta.

    With g = e^{2s} delta and s = 2 log(phi) / (n-2):

        Ric_rr  = -(n-2) s'' - Delta_0 s
        Ric_tan = -(n-2) s'/r - Delta_0 s - (n-2) s'^2

    in a delta-orthonormal frame; dividing by e^{2s} gives the eigenvalues.
    Derivatives of phi come from the pointwise stencils, independently of
    the flux-form Laplacian behind :func:`scalar_curvature`.
    """
    phi = _check_positive(_check_length(phi, grid))
    n = c.n
    r = grid.r
    d1, d2 = grid.derivatives(phi)
    q = d1 / phi
    s1 = 2.0 / (n - 2) * q
    s2 = 2.0 / (n - 2) * (d2 / phi - q * q)
    lap_s = s2 + (n - 1) * s1 / r
    scale = phi ** (-c.metric_power)
    ric_rad = (-(n - 2) * s2 - lap_s) * scale
    ric_tan = (-(n - 2) * s1 / r - lap_s - (n - 2) * s1 * s1) * scale
    return ric_rad, ric_tan


def riemann_norm_lcf(ric_rad, ric_tan, R, c: DimensionalConstants) -> np.ndarray:
    """|Rm| of a locally conformally flat metric from its Ricci eigenvalues.

    Weyl vanishes, so Rm = P (KN) g with Schouten tensor
    P = (Ric - R g / (2(n-1))) / (n-2), and |P (KN) g|^2 = 4(n-2)|P|^2 + 4 (tr P)^2.
    """
    ric_rad = np.asarray(ric_rad, dtype=float)
    ric_tan = np.asarray(ric_tan, dtype=float)
    R = np.asarray(R, dtype=float)
    if not (ric_rad.shape == ric_tan.shape == R.shape):
        raise GridError("riemann_norm_lcf: mismatched field shapes")
    n = c.n
    shift = R / (2.0 * (n - 1))
    p_rad = (ric_rad - shift) / (n - 2)
    p_tan = (ric_tan - shift) / (n - 2)
    p_sq = p_rad**2 + (n - 1) * p_tan**2
    p_tr = p_rad + (n - 1) * p_tan
    return np.sqrt(np.maximum(4.0 * (n - 2) * p_sq + 4.0 * p_tr**2, 0.0))


def volume_element(phi, grid: RadialGrid, c: DimensionalConstants) -> np.ndarray:
    """Radial density of dvol: omega phi^(2n/(n-2)) r^(n-1)."""
    phi = _check_positive(_check_length(phi, grid))
    return c.omega * phi ** c.volume_power * grid.r ** (c.n - 1)


@dataclass(frozen=True, eq=False)
class ConformalData:
    """Base factor w0, flow factor u and their product U = u w0.

    The excesses w0 - 1 and v = 1 - u are carried separately because far
    from the origin they are many orders of magnitude below one; mass and
    curvature are computed from U - 1 = (w0 - 1) - v w0 so that they keep
    full relative precision there.

    ``R0`` is the scalar curvature of g0.  Constructors that know it exactly
    (Schwarzschild: zero) pass it in; otherwise it is computed from w0.  The
    curvature of g(t) follows from the transformation law

        R(U) = -(1/a) u^(-N) L_{g0} u,
        L_{g0} u = w0^(-N) [Delta_0(w0 u) - u Delta_0 w0] - a R0 u,

    which equals -(1/a) U^(-N) Delta_0 U whenever R0 is the computed one, and
    keeps u = 1 exactly stationary on scalar-flat data with a singular w0.
    """

    grid: RadialGrid
    w0: np.ndarray
    u: np.ndarray | None = None
    R0: np.ndarray | None = None
    label: str = ""
    v: np.ndarray | None = None
    w0_excess: np.ndarray | None = None
    U: np.ndarray = field(init=False, repr=False)
    U_excess: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w0 = _check_positive(_check_length(self.w0, self.grid), "w0")
        if self.v is not None:
            v = _check_length(self.v, self.grid)
            u = 1.0 - v
        elif self.u is not None:
            u = _check_length(self.u, self.grid)
            v = 1.0 - u
        else:
            u, v = np.ones(self.grid.size), np.zeros(self.grid.size)
        u = _check_positive(u, "u")
        if self.w0_excess is None:
            w0x = w0 - 1.0
        else:
            w0x = _check_length(self.w0_excess, self.grid)
        if self.R0 is not None:
            object.__setattr__(self, "R0", _check_length(self.R0, self.grid))
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w0_excess", w0x)
        object.__setattr__(self, "U", u * w0)
        object.__setattr__(self, "U_excess", w0x - v * w0)

    def with_v(self, v) -> "ConformalData":
        return ConformalData(self.grid, self.w0, None, self.R0, self.label,
                             np.asarray(v, dtype=float), self.w0_excess)

    def with_u(self, u) -> "ConformalData":
        return ConformalData(self.grid, self.w0, np.asarray(u, dtype=float), self.R0,
                             self.label, None, self.w0_excess)

    def laplacian_w0(self, c: DimensionalConstants) -> np.ndarray:
        return flat_radial_laplacian(self.w0_excess, self.grid, c)

    def base_scalar_curvature(self, c: DimensionalConstants) -> np.ndarray:
        if self.R0 is not None:
            return self.R0
        return -self.laplacian_w0(c) * self.w0 ** (-c.N) / c.a

    def conformal_laplacian(self, f, c: DimensionalConstants) -> np.ndarray:
        """The flux-form L_{g0} used by the solver."""
        f = _check_length(f, self.grid)
        w0 = self.w0
        lap = flat_radial_laplacian(w0 * f, self.grid, c)
        R0 = self.base_scalar_curvature(c)
        return w0 ** (-c.N) * (lap - f * self.laplacian_w0(c)) - c.a * R0 * f

    def flow_rhs(self, c: DimensionalConstants) -> np.ndarray:
        """L_{g0} u evaluated from v = 1 - u without cancellation."""
        w0, v = self.w0, self.v
        lap = flat_radial_laplacian(w0 * v, self.grid, c)
        R0 = self.base_scalar_curvature(c)
        return -w0 ** (-c.N) * (lap - v * self.laplacian_w0(c)) - c.a * R0 * self.u

    def scalar_curvature(self, c: DimensionalConstants) -> np.ndarray:
        if self.R0 is None:
            lap = flat_radial_laplacian(self.U_excess, self.grid, c)
            return -lap * self.U ** (-c.N) / c.a
        return -self.u ** (-c.N) * self.flow_rhs(c) / c.a
