"""Mass, Einstein-Hilbert and curvature diagnostics along a trajectory.

All identity checks run on the geometric clock (dg/dt = -R g); FlowState
carries t_geom = t_u / c_n.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import (ConformalData, DimensionalConstants, GeometryDomainError,
                       conformal_laplace_beltrami)
from .norms import DecayFit, decay_exponent_fit
from .solver import Trajectory, curvature_norm, max_principle_envelope

LADDER_FRACTIONS = (1 / 100, 1 / 31.6, 1 / 10, 1 / 3.16, 1 / 1.5)
DEFAULT_C_PRIME = 289.0


class UnreliableLimitWarning(UserWarning):
    pass


class DivergenceWarning(UserWarning):
    pass


def _U_flux(data: ConformalData, c: DimensionalConstants) -> np.ndarray:
    """r^(n-1) U' at the nodes, exact on 1 + A r^(2-n)."""
    # differencing U - 1 keeps the small far-field increments exact
    return data.grid.node_flux(data.U_excess, c.n)


def mass_profile(data: ConformalData, c: DimensionalConstants) -> np.ndarray:
    """m(r) = (1-n)/(n-2) U^((6-n)/(n-2)) U' r^(n-1) at every node."""
    n = c.n
    return (1 - n) / (n - 2) * data.U ** ((6 - n) / (n - 2)) * _U_flux(data, c)


def adm_mass_at_radius(data: ConformalData, radius: float, c: DimensionalConstants) -> float:
    """Closed radial form of the mass integral on the sphere of given radius.

    Node values are interpolated by a local cubic, so the radius need not be
    a node and ladders are comparable across grids.
    """
    grid = data.grid
    if not 0 < radius <= grid.r_max * (1 + 1e-12):
        raise GeometryDomainError(f"radius {radius} outside (0, {grid.r_max}]")
    m = mass_profile(data, c)
    k = grid.index_of(radius)
    if grid.r[k] == radius:
        return float(m[k])
    lo = min(max(k - 2, 0), grid.size - 4)
    sl = slice(lo, lo + 4)
    return float(CubicSpline(grid.r[sl], m[sl])(radius))


def ladder_radii(grid, fractions=LADDER_FRACTIONS):
    return [f * grid.r_max for f in fractions]


def adm_mass_ladder(data: ConformalData, c: DimensionalConstants, radii=None):
    radii = ladder_radii(data.grid) if radii is None else radii
    return [(float(r), adm_mass_at_radius(data, r, c)) for r in radii]


@dataclass(frozen=True)
class MassExtrapolation:
    value: float
    residual: float
    spread: float
    unreliable: bool


def adm_mass_extrapolate(ladder) -> MassExtrapolation:
    """Least squares m(r) = m + c1/r + c2/r^2 over the ladder (>= 3 entries)."""
    ladder = list(ladder)
    if len(ladder) < 3:
        raise ValueError("mass extrapolation needs at least 3 ladder entries")
    r = np.array([a for a, _ in ladder], dtype=float)
    m = np.array([b for _, b in ladder], dtype=float)
    if np.any(np.diff(r) <= 0):
        raise ValueError("ladder radii must be increasing")
    A = np.stack([np.ones_like(r), 1.0 / r, 1.0 / r**2], axis=1)
    # scale columns for conditioning
    s = np.max(np.abs(A), axis=0)
    coef, *_ = np.linalg.lstsq(A / s, m, rcond=None)
    coef = coef / s
    resid = float(np.max(np.abs(A @ coef - m)))
    spread = float(np.max(m) - np.min(m))
    d = np.diff(m)
    monotone = bool(np.all(d >= 0) or np.all(d <= 0))
    floor = 1e-14 * max(1.0, float(np.max(np.abs(m))))
    unreliable = (not monotone) and spread > 10.0 * max(resid, floor)
    if unreliable:
        warnings.warn("mass ladder is non-monotone beyond the model residual",
                      UnreliableLimitWarning, stacklevel=2)
    return MassExtrapolation(float(coef[0]), resid, spread, unreliable)


def mass_coefficient_fit(data: ConformalData, window, c: DimensionalConstants) -> float:
    """(n-1) times the r -> infinity limit of r^(n-2) (U - 1), fitted as a + b/r."""
    lo, hi = window
    if not (0 < lo < hi) or hi / lo < math.sqrt(10.0):
        raise GeometryDomainError(f"window [{lo}, {hi}] spans less than half a decade")
    r = data.grid.r
    m = (r >= lo) & (r <= hi)
    if m.sum() < 3:
        raise GeometryDomainError("window holds fewer than 3 nodes")
    y = r[m] ** (c.n - 2) * data.U_excess[m]
    A = np.stack([np.ones(m.sum()), 1.0 / r[m]], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float((c.n - 1) * coef[0])


def adm_mass_surface_integral(data: ConformalData, radius: float, c: DimensionalConstants,
                              n_dirs: int = 64, rel_step: float = 1e-3, seed: int = 7) -> float:
    """Cartesian evaluation of (1/(4 omega)) oint (d_j g_ij - d_i g_jj) dS^i.

    g_ij = U(|x|)^(4/(n-2)) delta_ij with U from a cubic spline in r.  Partial
    derivatives are fourth-order central differences along each Cartesian
    axis at points of the sphere; the sphere average uses seeded random
    directions (the integrand is the same on every direction).
    """
    n = c.n
    grid = data.grid
    spline = CubicSpline(grid.r, data.U_excess)
    # psi - 1 keeps the far-field differences above rounding
    psi = lambda x: np.expm1(4.0 / (n - 2) * np.log1p(spline(np.linalg.norm(x, axis=-1))))
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_dirs, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    h = rel_step * radius
    total = 0.0
    for nu in dirs:
        x = radius * nu
        # d_i psi for each axis i
        grad = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            pts = np.array([x - 2 * e, x - e, x + e, x + 2 * e])
            p = psi(pts)
            grad[i] = (p[0] - 8 * p[1] + 8 * p[2] - p[3]) / (12 * h)
        # d_j g_ij - d_i g_jj = d_i psi - n d_i psi
        integrand = (1 - n) * grad @ nu
        total += integrand
    mean = total / n_dirs
    area = c.omega * radius ** (n - 1)
    return float(mean * area / (4.0 * c.omega))


def _laplacian_U(data: ConformalData, c: DimensionalConstants, R=None):
    R = data.scalar_curvature(c) if R is None else R
    return -c.a * R * data.U**c.N


def _dvol(data: ConformalData, c: DimensionalConstants) -> np.ndarray:
    """Cell volumes of g: omega U^(2n/(n-2)) times the exact r^(n-1) cell integral."""
    return c.omega * data.U ** c.volume_power * data.grid.control_volumes(c.n)


def einstein_hilbert(data: ConformalData, c: DimensionalConstants) -> float:
    """Integral of R dvol via -(1/a) omega integral U Delta_0 U r^(n-1) dr."""
    lap = _laplacian_U(data, c)
    return float(-c.omega / c.a * np.sum(data.U * lap * data.grid.control_volumes(c.n)))


def r2_integral(data: ConformalData, c: DimensionalConstants) -> float:
    R = data.scalar_curvature(c)
    return float(np.sum(R * R * _dvol(data, c)))


@dataclass(frozen=True)
class TailEstimate:
    value: float
    exponent: float
    divergent: bool


def tail_estimate(data: ConformalData, c: DimensionalConstants, power: int = 1) -> TailEstimate:
    """Power-law fit of the R^power dvol density over the last decade, integrated to infinity."""
    r = data.grid.r
    R = data.scalar_curvature(c)
    dens = np.abs(R) ** power * c.omega * data.U ** c.volume_power * r ** (c.n - 1)
    m = r >= data.grid.r_max / 10
    keep = m & (dens > 1e-300)
    if keep.sum() < 3 or np.max(dens[m]) < 1e-14 * max(np.max(dens), 1e-300):
        return TailEstimate(0.0, math.nan, False)
    p, logC = np.polyfit(np.log(r[keep]), np.log(dens[keep]), 1)
    if p >= -1:
        warnings.warn("functional integrand does not decay faster than 1/r",
                      DivergenceWarning, stacklevel=2)
        return TailEstimate(math.inf, float(p), True)
    Rm = data.grid.r_max
    return TailEstimate(float(math.exp(logC) * Rm ** (p + 1) / (-(p + 1))), float(p), False)


@dataclass
class DiagnosticsRecord:
    t_u: float
    t_geom: float
    mass_ladder: list
    mass_extrapolated: float
    eh_functional: float
    r2_integral: float
    min_R: float
    max_R: float
    min_u: float
    max_u: float
    env_lo: float
    env_hi: float
    decay_exponent_v: float
    scalar_residual_sup: float = math.nan
    balance_residual: float = math.nan
    max_grad_R_weighted: float = math.nan
    extras: dict = field(default_factory=dict)


def make_record(state, data: ConformalData, c: DimensionalConstants, sup_R0: float,
                decay_window=None) -> DiagnosticsRecord:
    d = data.with_v(state.v)
    R = d.scalar_curvature(c)
    ladder = adm_mass_ladder(d, c)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnreliableLimitWarning)
        ext = adm_mass_extrapolate(ladder)
    lo, hi = max_principle_envelope(state.t_u, sup_R0, c)
    grid = d.grid
    window = decay_window or (grid.r_max / 100, grid.r_max / 2)
    fit = decay_exponent_fit(d.v, grid.r, window)
    return DiagnosticsRecord(
        t_u=state.t_u, t_geom=state.t_geom, mass_ladder=ladder,
        mass_extrapolated=ext.value, eh_functional=einstein_hilbert(d, c),
        r2_integral=r2_integral(d, c), min_R=float(np.min(R)), max_R=float(np.max(R)),
        min_u=float(np.min(d.u)), max_u=float(np.max(d.u)), env_lo=lo, env_hi=hi,
        decay_exponent_v=fit.exponent, extras={"decay_defined": fit.defined})


def _ddt(times, values, k):
    """Three-point derivative at index k (one-sided at the ends)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 3:
        raise ValueError("need at least 3 samples")
    j = min(max(k, 1), t.size - 2)
    t0, t1, t2 = t[j - 1], t[j], t[j + 1]
    y0, y1, y2 = y[j - 1], y[j], y[j + 1]
    x = t[k]
    # derivative of the quadratic interpolant at x
    l0 = (2 * x - t1 - t2) / ((t0 - t1) * (t0 - t2))
    l1 = (2 * x - t0 - t2) / ((t1 - t0) * (t1 - t2))
    l2 = (2 * x - t0 - t1) / ((t2 - t0) * (t2 - t1))
    return l0 * y0 + l1 * y1 + l2 * y2


@dataclass(frozen=True)
class BalanceTerms:
    residual: float
    d_eh: float
    mass_term: float
    dissipation: float


def balance_residual(records, k: int, c: DimensionalConstants) -> BalanceTerms:
    """|d/dt EH - 4 omega dm/dt - (1 - n/2) int R^2| at record k (geometric clock)."""
    t = [rec.t_geom for rec in records]
    d_eh = _ddt(t, [rec.eh_functional for rec in records], k)
    dm = _ddt(t, [rec.mass_extrapolated for rec in records], k)
    diss = (1 - c.n / 2) * records[k].r2_integral
    mass_term = 4 * c.omega * dm
    return BalanceTerms(float(abs(d_eh - mass_term - diss)), float(d_eh), float(mass_term),
                        float(diss))


def scalar_evolution_residual(snapshots, data: ConformalData, c: DimensionalConstants,
                              k: int = 1, clock: str = "geometric", window=None) -> np.ndarray:
    """dR/dt - (n-1) Delta_g R - R^2 at snapshot k, on r <= R_max/2.

    ``snapshots`` is a sequence of FlowState.  With clock="u_time" the time
    derivative is taken in u-time and multiplied by c_n.
    """
    if len(snapshots) < 3:
        raise ValueError("need at least three snapshots")
    if clock == "geometric":
        t = [s.t_geom for s in snapshots]
        factor = 1.0
    elif clock == "u_time":
        t = [s.t_u for s in snapshots]
        factor = c.c_n
    else:
        raise ValueError(f"unknown clock {clock!r}")
    Rs = [data.with_v(s.v).scalar_curvature(c) for s in snapshots]
    dRdt = factor * _ddt(t, Rs, k)
    dk = data.with_v(snapshots[k].v)
    R = Rs[k]
    lap = conformal_laplace_beltrami(R, dk.U, dk.grid, c)
    res = dRdt - (c.n - 1) * lap - R * R
    hi = data.grid.r_max / 2 if window is None else window
    return res[data.grid.r <= hi]


@dataclass(frozen=True)
class PositivityReport:
    min_R: float
    max_R: float
    tolerance: float
    passed: bool
    hypothesis_ok: bool
    t_at_min: float
    r_at_min: float


def positivity_monitor(traj: Trajectory, c: DimensionalConstants,
                       rel_tol: float = 1e-8) -> PositivityReport:
    """min over nodes and recorded times of R(g(t)); hypothesis flag from R_{g0}."""
    data = traj.data
    lo, hi = math.inf, -math.inf
    where = (math.nan, math.nan)
    for s in traj.states:
        R = data.with_v(s.v).scalar_curvature(c)
        k = int(np.argmin(R))
        if R[k] < lo:
            lo, where = float(R[k]), (s.t_u, float(data.grid.r[k]))
        hi = max(hi, float(np.max(R)))
    R0 = data.base_scalar_curvature(c)
    hyp = bool(np.min(R0) >= -1e-10 * (1 + np.max(np.abs(R0))))
    tol = -rel_tol * (1 + hi)
    return PositivityReport(lo, hi, tol, bool(lo >= tol), hyp, *where)


@dataclass(frozen=True)
class GradientEstimateReport:
    K: float
    ratio_max: float
    ball_radius: float
    tau: float
    c_prime: float
    g_residual_max: float
    g_residual_mean: float
    positive_fraction: float


def gradient_estimate_monitor(traj: Trajectory, ball_radius: float, c: DimensionalConstants,
                              c_prime: float = DEFAULT_C_PRIME) -> GradientEstimateReport:
    """Monitor for the Bernstein-type bound |grad R| <= C K (1/r^2 + 1/tau + K)^(1/2).

    K is sup |Rm| over the coordinate ball and the recorded times, tau the
    last recorded geometric time.  The ratio |grad R|_g / (K (...)^(1/2)) is
    taken over the half ball at t > 0.  G = min(1/289, 1/C') (16K^2 + R^2)
    |grad R|^2 / K^4 is checked against (d/dt - (n-1) Delta) G <= -G^2 + K^2
    by finite differences; the signed residual LHS + G^2 - K^2 is summarised.
    """
    data = traj.data
    grid = data.grid
    states = traj.states
    ball = grid.r <= ball_radius
    half = grid.r <= ball_radius / 2
    K = 0.0
    for s in states:
        K = max(K, float(np.max(curvature_norm(data.with_v(s.v), c)[ball])))
    tau = states[-1].t_geom
    if K == 0 or tau <= 0:
        return GradientEstimateReport(K, 0.0, ball_radius, tau, c_prime, 0.0, 0.0, 0.0)
    grads, Gs, Rs = [], [], []
    for s in states:
        d = data.with_v(s.v)
        R = d.scalar_curvature(c)
        dR, _ = grid.derivatives(R)
        g = np.abs(dR) * d.U ** (-2.0 / (c.n - 2))
        grads.append(g)
        Rs.append(R)
        Gs.append(min(1 / 289.0, 1 / c_prime) * (16 * K**2 + R**2) * g**2 / K**4)
    denom = K * math.sqrt(1 / ball_radius**2 + 1 / tau + K)
    ratio = max(float(np.max(g[half])) for g, s in zip(grads, states) if s.t_geom > 0) / denom
    t = [s.t_geom for s in states]
    res = []
    for k in range(1, len(states) - 1):
        d = data.with_v(states[k].v)
        dG = _ddt(t, Gs, k)
        lap = conformal_laplace_beltrami(Gs[k], d.U, grid, c)
        res.append((dG - (c.n - 1) * lap + Gs[k] ** 2 - K**2)[half])
    if res:
        res = np.concatenate(res)
        stats = (float(np.max(res)), float(np.mean(res)), float(np.mean(res > 0)))
    else:
        stats = (math.nan, math.nan, math.nan)
    return GradientEstimateReport(K, ratio, ball_radius, tau, c_prime, *stats)


def decay_tracker(traj: Trajectory, window=None) -> list[DecayFit]:
    """Far-field exponent of v = 1 - u at every recorded time."""
    grid = traj.data.grid
    window = window or (grid.r_max / 100, grid.r_max / 2)
    lo, hi = window
    if lo < grid.r_max / 100 * (1 - 1e-9) or hi > grid.r_max / 2 * (1 + 1e-9) or hi / lo < 10:
        raise ValueError("decay window must span a decade inside [R_max/100, R_max/2]")
    return [decay_exponent_fit(s.v, grid.r, window) for s in traj.states]


def analyze(traj: Trajectory, decay_window=None) -> list[DiagnosticsRecord]:
    """One record per recorded state, with balance and scalar residuals filled in."""
    c = traj.config.constants
    sup_R0 = traj.problem.sup_R0
    records = [make_record(s, traj.data, c, sup_R0, decay_window) for s in traj.states]
    if len(records) >= 3:
        for k in range(len(records)):
            records[k].balance_residual = balance_residual(records, k, c).residual
            j = min(max(k, 1), len(records) - 2)
            window = traj.states[j - 1:j + 2]
            res = scalar_evolution_residual(window, traj.data, c, k=k - (j - 1))
            records[k].scalar_residual_sup = float(np.max(np.abs(res)))
    return records
