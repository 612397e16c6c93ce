"""Radial grids on [0, R_max] with an even reflection about the origin.

Nodes are cell centred in a stretching coordinate xi in (0, 1]:

    r(xi) = A * sinh(B * xi),    xi_i = (i + 1/2) * dxi,    dxi = 1 / (M - 1/2)

so the last node sits exactly on R_max and the mirror node -r_0 is the image of
-xi_0.  The map is odd and smooth, which keeps three-point stencils second
order and makes grid refinement (M -> 2M) a genuine halving of dxi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

MAX_STRETCH = 1.1


class GridError(ValueError):
    """Raised for grids that violate the radial-grid contract."""


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Strictly increasing radial nodes with 0 < r_0 and r_{M-1} = R_max.

    ``map_a`` and ``map_b`` are set when the grid came from :meth:`stretched`
    and let :meth:`refined` reproduce the same map at half the spacing.
    """

    r: np.ndarray
    map_a: float | None = None
    map_b: float | None = None
    faces: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 1 or r.size < 4:
            raise GridError(f"invalid grid: need at least 4 nodes, got {r.size}")
        if not np.all(np.isfinite(r)) or r[0] <= 0.0:
            raise GridError("invalid grid: first node must be finite and positive")
        if np.any(np.diff(r) <= 0.0):
            raise GridError("invalid grid: nodes must be strictly increasing")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)
        # face i sits between node i-1 and node i; the origin face is r = 0 and
        # the boundary node owns the half cell ending at R_max
        faces = np.empty(r.size + 1)
        faces[0] = 0.0
        faces[1:-1] = 0.5 * (r[1:] + r[:-1])
        faces[-1] = r[-1]
        faces.setflags(write=False)
        object.__setattr__(self, "faces", faces)

    @classmethod
    def stretched(cls, n_nodes: int, h0: float, r_max: float) -> "RadialGrid":
        """Sinh-stretched grid with inner spacing ~h0 and outer radius r_max."""
        if n_nodes < 16:
            raise GridError(f"invalid grid: need at least 16 nodes, got {n_nodes}")
        if h0 <= 0.0 or r_max <= 0.0:
            raise GridError("invalid grid: h0 and r_max must be positive")
        dxi = 1.0 / (n_nodes - 0.5)
        target = r_max * dxi / h0
        if target < 1.0:
            raise GridError(
                f"invalid grid: h0={h0} too coarse for {n_nodes} nodes up to {r_max}")
        if target - 1.0 < 1e-12:
            b = 1e-8
        else:
            b = brentq(lambda x: np.sinh(x) / x - target, 1e-8, 700.0, xtol=1e-14)
        a = r_max / np.sinh(b)
        return cls._from_map(n_nodes, a, b)

    @classmethod
    def _from_map(cls, n_nodes, a, b):
        dxi = 1.0 / (n_nodes - 0.5)
        xi = (np.arange(n_nodes) + 0.5) * dxi
        r = a * np.sinh(b * xi)
        r[-1] = a * np.sinh(b)
        grid = cls(r, map_a=float(a), map_b=float(b))
        if grid.stretch > MAX_STRETCH:
            raise GridError(
                f"invalid grid: spacing ratio {grid.stretch:.4f} exceeds {MAX_STRETCH}")
        return grid

    def refined(self, factor: int = 2) -> "RadialGrid":
        """Same map, ``factor`` times as many nodes."""
        if self.map_a is None:
            raise GridError("only stretched grids can be refined")
        return self._from_map(factor * self.size, self.map_a, self.map_b)

    def truncated(self, radius: float) -> "RadialGrid":
        """Sub-grid ending at the node nearest to ``radius``."""
        k = self.index_of(radius)
        return RadialGrid(self.r[: k + 1].copy())

    @property
    def size(self) -> int:
        return self.r.size

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    @property
    def h0(self) -> float:
        return float(self.r[1] - self.r[0])

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.r)

    @property
    def stretch(self) -> float:
        h = np.diff(np.concatenate(([-self.r[0]], self.r)))
        return float(np.max(h[1:] / h[:-1]))

    @property
    def widths(self) -> np.ndarray:
        """Cell widths; sum to R_max."""
        return np.diff(self.faces)

    def control_volumes(self, n: int) -> np.ndarray:
        """Exact integrals of r^(n-1) dr over each cell."""
        fn = self.faces**n
        return np.diff(fn) / n

    def index_of(self, radius: float) -> int:
        if radius < 0.0 or radius > self.r_max * (1 + 1e-12):
            raise GridError(f"radius {radius} outside grid [0, {self.r_max}]")
        return int(np.argmin(np.abs(self.r - radius)))

    def derivatives(self, f) -> tuple[np.ndarray, np.ndarray]:
        """First and second derivatives of an even field.

        Three-point nonuniform stencils; the origin uses the mirror value
        f(-r_0) = f(r_0); the last node uses a one-sided stencil.
        """
        f = np.asarray(f, dtype=float)
        r = self.r
        xm = np.concatenate(([-r[0]], r[:-1]))
        fm = np.concatenate(([f[0]], f[:-1]))
        d1 = np.empty_like(f)
        d2 = np.empty_like(f)
        hm = r[:-1] - xm[:-1]
        hp = r[1:] - r[:-1]
        f0, f1, f2 = fm[:-1], f[:-1], f[1:]
        s = hm + hp
        # difference form, so constants are annihilated exactly
        qm = (f1 - f0) / hm
        qp = (f2 - f1) / hp
        d1[:-1] = (hp * qm + hm * qp) / s
        d2[:-1] = 2.0 * (qp - qm) / s
        h1 = r[-2] - r[-3]
        h2 = r[-1] - r[-2]
        s = h1 + h2
        q1 = (f[-2] - f[-3]) / h1
        q2 = (f[-1] - f[-2]) / h2
        d2[-1] = 2.0 * (q2 - q1) / s
        d1[-1] = q2 + 0.5 * h2 * d2[-1]
        return d1, d2

    def fv_flux(self, f, n: int) -> np.ndarray:
        """Face fluxes m^(n-1) (f_{i+1} - f_i) / (r_{i+1} - r_i), m the face midpoint."""
        f = np.asarray(f, dtype=float)
        return self.faces[1:-1] ** (n - 1) * np.diff(f) / np.diff(self.r)

    def harmonic_coefficients(self, n: int) -> np.ndarray:
        """kappa_{i+1/2} with flux = kappa * (f_{i+1} - f_i).

        Exact for every combination of 1 and r^(2-n); its error relative to
        r^(n-1) f' is O((h/r)^2), so it is only used in the far field.
        """
        r = self.r
        # r_{i+1}^{2-n} - r_i^{2-n} without cancellation
        diff = r[:-1] ** (2 - n) * np.expm1((n - 2) * np.log(r[:-1] / r[1:]))
        return (2 - n) / diff

    def harmonic_flux(self, f, n: int) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return self.harmonic_coefficients(n) * np.diff(f)

    def node_flux(self, f, n: int, origin_flux: float = 0.0) -> np.ndarray:
        """r^(n-1) f' at the nodes, interpolated linearly between face fluxes.

        Exact on 1 and r^(2-n); the last node continues the last face flux.
        """
        faces = self.faces
        phi = np.empty(self.size + 1)
        phi[0] = origin_flux
        phi[1:-1] = self.harmonic_flux(f, n)
        phi[-1] = phi[-2]
        lo, hi = faces[:-1], faces[1:]
        w = (self.r - lo) / (hi - lo)
        out = (1.0 - w) * phi[:-1] + w * phi[1:]
        out[-1] = phi[-2]
        return out

    def integrate(self, values, lo: float | None = None, hi: float | None = None,
                  method: str = "cell") -> float:
        """Integral of ``values`` dr.

        ``cell`` sums value * cell width over the whole grid (the rule the
        flux-form functionals are consistent with); ``spline`` integrates a
        cubic spline between ``lo`` and ``hi``.
        """
        values = np.asarray(values, dtype=float)
        if method == "cell":
            if lo is not None or hi is not None:
                mask = np.ones(self.size, dtype=bool)
                if lo is not None:
                    mask &= self.r >= lo
                if hi is not None:
                    mask &= self.r <= hi
                return float(np.sum(values[mask] * self.widths[mask]))
            return float(np.sum(values * self.widths))
        if method == "spline":
            x = np.concatenate(([-self.r[0]], self.r))
            y = np.concatenate(([values[0]], values))
            spline = CubicSpline(x, y)
            a = 0.0 if lo is None else lo
            b = self.r_max if hi is None else hi
            return float(spline.integrate(a, b))
        raise ValueError(f"unknown integration method {method!r}")
