"""Asymptotically flat base factors w0 and their validation.

Three families are supported: isotropic Schwarzschild, a superharmonic bump
and tabulated profiles read from CSV.  Every constructor returns u = 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .geometry import ConformalData, DimensionalConstants, GeometryDomainError
from .grid import RadialGrid

KINDS = ("schwarzschild", "bump", "table")


class InitialDataError(ValueError):
    """Invalid parameters or a profile that could not be ingested."""


class ConstructionFailed(InitialDataError):
    def __init__(self, message, radius=None):
        super().__init__(message)
        self.radius = radius


@dataclass(frozen=True)
class InitialDataSpec:
    kind: str
    mass_param: float | None = None
    amplitude: float | None = None
    r_center: float | None = None
    width: float | None = None
    table_path: str | None = None
    nominal_tau: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InitialDataError(f"kind: expected one of {KINDS}, got {self.kind!r}")
        groups = {
            "schwarzschild": (self.mass_param,),
            "bump": (self.amplitude, self.r_center, self.width),
            "table": (self.table_path,),
        }
        for kind, values in groups.items():
            given = [v is not None for v in values]
            if kind == self.kind and not all(given):
                raise InitialDataError(f"kind {kind!r} needs all of its parameters")
            if kind != self.kind and any(given):
                raise InitialDataError(
                    f"parameters of kind {kind!r} given for kind {self.kind!r}")
        if self.nominal_tau is not None and self.nominal_tau <= 0:
            raise InitialDataError("nominal_tau must be positive")

    def build(self, grid: RadialGrid, c: DimensionalConstants) -> ConformalData:
        if self.kind == "schwarzschild":
            return build_schwarzschild(grid, c, self.mass_param)
        if self.kind == "bump":
            return build_bump(grid, c, self.amplitude, self.r_center, self.width)
        return load_profile(self.table_path, grid, c)


def build_schwarzschild(grid: RadialGrid, c: DimensionalConstants,
                        target_mass: float) -> ConformalData:
    """w0 = 1 + m/(n-1) r^(2-n), scalar flat, ADM mass m."""
    if not target_mass >= 0:
        raise GeometryDomainError(f"target_mass must be >= 0, got {target_mass}")
    n = c.n
    excess = target_mass / (n - 1) * grid.r ** (2 - n)
    return ConformalData(grid, 1.0 + excess, R0=np.zeros(grid.size),
                         label=f"schwarzschild(m={target_mass:g})", w0_excess=excess)


TAIL_POWER = 2


def smoothstep(x):
    """C-infinity monotone transition from 0 (x <= 0) to 1 (x >= 1)."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def smoothstep_derivative(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < 1)
    xs = np.where(inside, x, 0.5)
    # S = 1 / (1 + exp(1/x - 1/(1-x)))
    e = np.exp(1.0 / xs - 1.0 / (1.0 - xs))
    ds = e * (1.0 / xs**2 + 1.0 / (1.0 - xs) ** 2) / (1.0 + e) ** 2
    return np.where(inside, ds, 0.0)


def _bump_limits(n, r_center, width):
    if not (r_center > 0 and width > 0):
        raise InitialDataError("bump r_center and width must be positive")
    r0, r1 = r_center - width, r_center + width
    if r0 <= 0:
        raise InitialDataError(
            f"bump width {width} must be smaller than r_center {r_center}")
    return r0, r1


def bump_flux_profile(r, r0, r1, k=TAIL_POWER):
    """S(r) = step((r - r0)/(r1 - r0)) (1 - (r0/r)^k): nondecreasing, 0 below r0, -> 1."""
    r = np.asarray(r, dtype=float)
    return smoothstep((r - r0) / (r1 - r0)) * (1.0 - (r0 / np.maximum(r, r0)) ** k)


def _bump_tail(r, n, r0, k=TAIL_POWER):
    """q for r >= r1: r^(2-n) (1 - (n-2)/(n-2+k) (r0/r)^k)."""
    return r ** (2 - n) * (1.0 - (n - 2) / (n - 2 + k) * (r0 / r) ** k)


def bump_profile(r, n: int, r_center: float, width: float):
    """Continuum q with r^(n-1) q' = -(n-2) S(r).

    q is constant for r <= r0 = r_center - width and behaves like r^(2-n)
    at infinity.  Since S is nondecreasing, Delta_0 q <= 0, and
    Delta_0 q = O(r^(-n-2)) so R_{g0} is integrable with a power-law tail.
    """
    r0, r1 = _bump_limits(n, r_center, width)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    x, wts = np.polynomial.legendre.leggauss(64)
    out = np.empty_like(r)
    for j, rj in enumerate(r):
        if rj >= r1:
            out[j] = _bump_tail(rj, n, r0)
            continue
        lo = max(rj, r0)
        half = 0.5 * (r1 - lo)
        rho = lo + half * (x + 1.0)
        inner = (n - 2) * half * np.sum(wts * bump_flux_profile(rho, r0, r1) * rho ** (1 - n))
        out[j] = _bump_tail(r1, n, r0) + inner
    return out


def bump_laplacian(r, n: int, r_center: float, width: float):
    """Closed form Delta_0 q = -(n-2) S'(r) / r^(n-1)."""
    r0, r1 = _bump_limits(n, r_center, width)
    r = np.asarray(r, dtype=float)
    k = TAIL_POWER
    rr = np.maximum(r, r0)
    step = smoothstep((r - r0) / (r1 - r0))
    dstep = smoothstep_derivative((r - r0) / (r1 - r0)) / (r1 - r0)
    ds = dstep * (1.0 - (r0 / rr) ** k) + step * k * r0**k * rr ** (-k - 1)
    return -(n - 2) * ds / r ** (n - 1)


def build_bump(grid: RadialGrid, c: DimensionalConstants, A: float,
               r_center: float, width: float) -> ConformalData:
    """w0 = 1 + A q on the grid, with q integrated from its face fluxes.

    The discrete q has face fluxes -(n-2) S(face), so the flux-form
    Laplacian of w0 is <= 0 node by node and R_{g0} >= 0 holds exactly, not
    only up to truncation error.  q matches the continuum profile at R_max
    and converges to it at second order elsewhere.
    """
    if not A >= 0:
        raise InitialDataError(f"bump amplitude must be >= 0, got {A}")
    n = c.n
    r0, r1 = _bump_limits(n, r_center, width)
    faces = grid.faces[1:-1]
    flux = -(n - 2) * bump_flux_profile(faces, r0, r1)
    dq = flux * np.diff(grid.r) / faces ** (n - 1)
    q = np.empty(grid.size)
    q[-1] = _bump_tail(grid.r_max, n, r0) if grid.r_max >= r1 else bump_profile(grid.r_max, n, r_center, width)[0]
    q[:-1] = q[-1] - np.cumsum(dq[::-1])[::-1]
    data = ConformalData(grid, 1.0 + A * q, label=f"bump(A={A:g},rc={r_center:g},w={width:g})",
                         w0_excess=A * q)
    lap = A * np.diff(np.concatenate(([0.0], grid.fv_flux(q, n), [flux[-1]]))) \
        / grid.control_volumes(n)
    scale = A * (n - 2) / (r0 ** (n - 1) * (r1 - r0))
    bad = np.flatnonzero(lap > 1e-12 * scale)
    if bad.size:
        raise ConstructionFailed(
            f"bump is not superharmonic at r={grid.r[bad[0]]:.6g}", grid.r[bad[0]])
    return data


def read_profile_csv(path):
    """Parse a ``r,w0`` CSV (``#`` comments allowed) into two arrays."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InitialDataError(f"cannot read profile {path}: {exc}") from exc
    rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise InitialDataError(f"{path}: empty profile")
    reader = csv.reader(rows)
    header = [h.strip() for h in next(reader)]
    if header != ["r", "w0"]:
        raise InitialDataError(f"{path}: expected header 'r,w0', got {','.join(header)!r}")
    r, w = [], []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != 2:
            raise InitialDataError(f"{path}: data row {lineno} has {len(row)} fields")
        try:
            r.append(float(row[0]))
            w.append(float(row[1]))
        except ValueError as exc:
            raise InitialDataError(f"{path}: data row {lineno}: {exc}") from exc
    return np.array(r), np.array(w)


def load_profile(path, grid: RadialGrid, c: DimensionalConstants) -> ConformalData:
    """Tabulated w0 interpolated (monotone cubic) onto ``grid``.

    Inside the first sample w0 is held constant; beyond the last sample it
    continues as the harmonic tail 1 + (w_last - 1) (r_last / r)^(n-2).
    """
    r, w = read_profile_csv(path)
    if r.size < 2:
        raise InitialDataError(f"{path}: need at least two samples")
    if not np.all(np.isfinite(r)) or not np.all(np.isfinite(w)):
        raise InitialDataError(f"{path}: non-finite values")
    if np.any(np.diff(r) <= 0) or r[0] < 0:
        raise InitialDataError(f"{path}: r must be nonnegative and strictly increasing")
    if np.any(w <= 0):
        k = int(np.argmax(w <= 0))
        raise GeometryDomainError(f"{path}: w0 must be positive (r={r[k]:g}, w0={w[k]:g})")
    if r[-1] < 0.5 * grid.r_max:
        raise InitialDataError(
            f"{path}: profile reaches r={r[-1]:g}, needs at least R_max/2={grid.r_max / 2:g}")
    n = c.n
    x = grid.r
    ex = np.empty(grid.size)
    inside = (x >= r[0]) & (x <= r[-1])
    ex[inside] = PchipInterpolator(r, w - 1.0)(x[inside])
    ex[x < r[0]] = w[0] - 1.0
    far = x > r[-1]
    ex[far] = (w[-1] - 1.0) * (r[-1] / x[far]) ** (n - 2)
    return ConformalData(grid, 1.0 + ex, label=f"table({Path(path).name})", w0_excess=ex)


@dataclass(frozen=True)
class NonnegScalarReport:
    min_R: float
    max_abs_R: float
    l1_norm: float
    tolerance: float
    passed: bool
    argmin_r: float


def verify_nonneg_scalar(data: ConformalData, c: DimensionalConstants) -> NonnegScalarReport:
    """min R_{g0}, its L^1(dvol) norm, and pass/fail against -1e-10 (1 + max|R|)."""
    R = data.base_scalar_curvature(c)
    dvol = c.omega * data.w0 ** c.volume_power * data.grid.control_volumes(c.n)
    max_abs = float(np.max(np.abs(R)))
    tol = -1e-10 * (1.0 + max_abs)
    k = int(np.argmin(R))
    return NonnegScalarReport(float(R[k]), max_abs, float(np.sum(np.abs(R) * dvol)),
                              tol, bool(R[k] >= tol), float(data.grid.r[k]))


def base_curvature_sup(data: ConformalData, c: DimensionalConstants) -> float:
    return float(np.max(np.abs(data.base_scalar_curvature(c))))


def decay_order(data: ConformalData, lo: float, hi: float) -> float:
    """Log-log slope of w0 - 1 over [lo, hi], negated."""
    r = data.grid.r
    m = (r >= lo) & (r <= hi)
    v = np.abs(data.w0[m] - 1.0)
    if m.sum() < 3 or np.any(v <= 0):
        return math.nan
    return float(-np.polyfit(np.log(r[m]), np.log(v), 1)[0])


__all__ = [
    "InitialDataSpec", "InitialDataError", "ConstructionFailed", "build_schwarzschild",
    "build_bump", "bump_profile", "bump_laplacian", "bump_flux_profile", "smoothstep", "load_profile",
    "read_profile_csv", "verify_nonneg_scalar", "NonnegScalarReport", "base_curvature_sup",
    "decay_order",
]
