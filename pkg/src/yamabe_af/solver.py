"""Crank-Nicolson integration of d(u^N)/dt = L_{g0} u.

The conformal Laplacian is linear and time independent, so it is assembled
once as a tridiagonal operator K.  The unknown is v = 1 - u, which is tiny
in the far field and would be lost to rounding if u itself were stored.
With E(v) = u^N - 1 (evaluated through expm1/log1p) and K 1 = -a R0, each
step solves

    F(v+) = E(v+) - E(v) - dt/2 (2 K1 - K v+ - K v) = 0

by Newton's method with the exact tridiagonal Jacobian.
The last row carries the outer boundary condition instead:

    robin_decay    (u - 1) r^(n-2) equal at the last two nodes
    dirichlet_one  u = 1
    free           last node evolves with the harmonic-closure operator
                   (only used for idealised test problems)

Time is kept in the u-clock of the equation above; the geometric clock of
dg/dt = -R g is t_u / c_n.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from .geometry import (ConformalData, DimensionalConstants,
                       ricci_eigenvalues, riemann_norm_lcf)
from .grid import RadialGrid
from .initial_data import InitialDataSpec

log = logging.getLogger(__name__)

OUTER_BCS = ("robin_decay", "dirichlet_one", "free")
TIME_NORMALIZATIONS = ("u_time", "geometric")
BLOWUP_THRESHOLD = 1e-6
ENVELOPE_SLACK = 1e-9


class StepRejected(RuntimeError):
    """Newton did not converge; the caller should retry with a smaller dt."""


class BlowUpDetected(RuntimeError):
    """Positivity was lost or the step size collapsed below dt_min."""

    def __init__(self, message, state=None, t_max=None, trajectory=None):
        super().__init__(message)
        self.state = state
        self.t_max = t_max
        self.trajectory = trajectory


@dataclass(frozen=True)
class FlowConfig:
    constants: DimensionalConstants
    grid: RadialGrid
    initial: InitialDataSpec | None
    t_end: float
    dt_init: float
    dt_min: float
    dt_max: float
    newton_tol: float = 1e-11
    newton_max_iter: int = 30
    outer_bc: str = "robin_decay"
    diagnostics_stride: int = 1
    time_normalization: str = "u_time"
    delta_run: float = 1e-6
    C_run: float = 1e3
    grad_cap: float = 1e8
    curvature_cap: float = 1e8

    def __post_init__(self):
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise ValueError("newton tolerances must be positive")
        if self.outer_bc not in OUTER_BCS:
            raise ValueError(f"outer_bc must be one of {OUTER_BCS}")
        if self.time_normalization not in TIME_NORMALIZATIONS:
            raise ValueError(f"time_normalization must be one of {TIME_NORMALIZATIONS}")
        if self.diagnostics_stride < 1:
            raise ValueError("diagnostics_stride must be >= 1")

    @property
    def clock_scale(self) -> float:
        """u-time per unit of configured time."""
        return self.constants.c_n if self.time_normalization == "geometric" else 1.0

    @property
    def t_end_u(self) -> float:
        return self.t_end * self.clock_scale

    def u_time(self, dt: float) -> float:
        return dt * self.clock_scale


@dataclass(frozen=True, eq=False)
class FlowState:
    """Flow factor at u-time t_u, stored as v = 1 - u."""

    t_u: float
    v: np.ndarray
    c_n: float
    step_index: int = 0
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def u(self) -> np.ndarray:
        return 1.0 - self.v

    @property
    def t_geom(self) -> float:
        return self.t_u / self.c_n


@dataclass(frozen=True)
class StepReport:
    dt: float
    newton_iterations: int
    max_residual: float
    envelope_ok: bool


def max_principle_envelope(t_u: float, sup_R0: float, c: DimensionalConstants):
    """(lower, upper) bounds on u at u-time t_u; lower is 0 once its base is <= 0."""
    if t_u < 0 or sup_R0 < 0:
        raise ValueError("t_u and sup_R0 must be nonnegative")
    n = c.n
    k = (n - 2) / ((n - 1) * (n + 2)) * sup_R0 * t_u
    p = (n - 2) / 4.0
    upper = (1.0 + k) ** p
    lower = (1.0 - k) ** p if k < 1.0 else 0.0
    return lower, upper


def survival_time(delta: float, sup_R0: float, c: DimensionalConstants) -> float:
    """Guaranteed existence window of a Dirichlet step started from u >= delta."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if sup_R0 < 0:
        raise ValueError("sup_R0 must be nonnegative")
    if sup_R0 == 0:
        return math.inf
    n = c.n
    return (n - 1) * (n + 2) * delta ** (4.0 / (n - 2)) / (2.0 * (n - 2) * sup_R0)


def operator_bands(data: ConformalData, c: DimensionalConstants) -> np.ndarray:
    """Tridiagonal L_{g0} in scipy banded layout (rows: upper, diag, lower).

    Same operator as :meth:`ConformalData.conformal_laplacian`.
    """
    grid = data.grid
    n = c.n
    w0 = data.w0
    kappa = grid.faces[1:-1] ** (n - 1) / np.diff(grid.r)
    vol = grid.control_volumes(n)
    scale = w0 ** (-c.N) / vol
    M = grid.size
    up = np.zeros(M)
    lo = np.zeros(M)
    diag = np.zeros(M)
    # interior rows; the last row has zero flux difference (harmonic closure)
    up[:-1] = scale[:-1] * kappa * w0[1:]
    lo[1:-1] = scale[1:-1] * kappa[:-1] * w0[:-2]
    diag[:-1] -= scale[:-1] * kappa * w0[:-1]
    diag[1:-1] -= scale[1:-1] * kappa[:-1] * w0[1:-1]
    diag -= w0 ** (-c.N) * data.laplacian_w0(c) + c.a * data.base_scalar_curvature(c)
    ab = np.zeros((3, M))
    ab[0, 1:] = up[:-1]
    ab[1] = diag
    ab[2, :-1] = lo[1:]
    return ab


def banded_matvec(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    y = ab[1] * x
    y[:-1] += ab[0, 1:] * x[1:]
    y[1:] += ab[2, :-1] * x[:-1]
    return y


class FlowProblem:
    """Grid, data and assembled operator for one trajectory."""

    def __init__(self, data: ConformalData, c: DimensionalConstants,
                 outer_bc: str = "robin_decay", newton_tol: float = 1e-11,
                 newton_max_iter: int = 30):
        if outer_bc not in OUTER_BCS:
            raise ValueError(f"outer_bc must be one of {OUTER_BCS}")
        self.data = data
        self.c = c
        self.outer_bc = outer_bc
        self.newton_tol = newton_tol
        self.newton_max_iter = newton_max_iter
        self.K = operator_bands(data, c)
        # L_{g0} 1 = -a R0 holds exactly for the continuum form of the operator
        self.K1 = -c.a * data.base_scalar_curvature(c)
        self.sup_R0 = float(np.max(np.abs(data.base_scalar_curvature(c))))
        r = data.grid.r
        self.robin_ratio = (r[-2] / r[-1]) ** (c.n - 2)

    @classmethod
    def from_config(cls, config: FlowConfig, data: ConformalData | None = None):
        if data is None:
            data = config.initial.build(config.grid, config.constants)
        return cls(data, config.constants, config.outer_bc, config.newton_tol,
                   config.newton_max_iter)

    @property
    def grid(self) -> RadialGrid:
        return self.data.grid

    def initial_state(self) -> FlowState:
        return FlowState(0.0, np.array(self.data.v, dtype=float), self.c.c_n)

    def apply(self, u) -> np.ndarray:
        return banded_matvec(self.K, np.asarray(u, dtype=float))

    def power_excess(self, v) -> np.ndarray:
        """u^N - 1 for u = 1 - v, accurate for tiny v."""
        return np.expm1(self.c.N * np.log1p(-np.asarray(v, dtype=float)))

    def rhs(self, v) -> np.ndarray:
        """L_{g0} u for u = 1 - v."""
        return self.K1 - self.apply(v)

    def residual(self, v_new, v_old, dt) -> np.ndarray:
        F = (self.power_excess(v_new) - self.power_excess(v_old)
             - 0.5 * dt * (self.rhs(v_new) + self.rhs(v_old)))
        self._boundary_residual(F, v_new)
        return F

    def _boundary_residual(self, F, v):
        if self.outer_bc == "robin_decay":
            F[-1] = v[-1] - self.robin_ratio * v[-2]
        elif self.outer_bc == "dirichlet_one":
            F[-1] = v[-1]

    def jacobian(self, v, dt) -> np.ndarray:
        """dF/dv in banded layout."""
        J = 0.5 * dt * self.K
        J[1] -= self.c.N * (1.0 - v) ** (self.c.N - 1)
        if self.outer_bc != "free":
            J[1, -1] = 1.0
            J[2, -2] = -self.robin_ratio if self.outer_bc == "robin_decay" else 0.0
        return J

    def solve_step(self, v_old, dt):
        """Newton solve in v = 1 - u; returns (v_new, iterations, max|F|)."""
        v = np.array(v_old, dtype=float)
        if self.outer_bc == "dirichlet_one":
            v[-1] = 0.0
        for it in range(1, self.newton_max_iter + 1):
            F = self.residual(v, v_old, dt)
            res = float(np.max(np.abs(F)))
            if res <= self.newton_tol:
                return v, it - 1, res
            dv = solve_banded((1, 1), self.jacobian(v, dt), -F)
            v_prev = v
            v = v + dv
            if not np.all(np.isfinite(v)):
                break
            if np.max(v) >= 1.0:
                # keep u = 1 - v positive so u^N stays defined
                v = np.where(v >= 1.0, 0.5 * (1.0 + v_prev), v)
        F = self.residual(v, v_old, dt) if np.all(np.isfinite(v)) else np.array([np.inf])
        res = float(np.max(np.abs(F)))
        if res <= self.newton_tol:
            return v, self.newton_max_iter, res
        raise StepRejected(f"Newton did not converge (|F|={res:.3e}, dt={dt:.3e})")

    def envelope_ok(self, state: FlowState) -> bool:
        lo, hi = max_principle_envelope(state.t_u, self.sup_R0, self.c)
        return bool(np.min(state.u) >= lo - ENVELOPE_SLACK and
                    np.max(state.u) <= hi + ENVELOPE_SLACK)

    def step(self, state: FlowState, dt: float):
        v, iters, res = self.solve_step(state.v, dt)
        min_u = 1.0 - float(np.max(v))
        if min_u < BLOWUP_THRESHOLD:
            raise BlowUpDetected(
                f"min u = {min_u:.3e} below {BLOWUP_THRESHOLD:g} at t_u={state.t_u + dt:.6g}",
                state=state, t_max=state.t_u + dt)
        new = FlowState(state.t_u + dt, v, state.c_n, state.step_index + 1)
        return new, StepReport(dt, iters, res, self.envelope_ok(new))


def step(state: FlowState, dt: float, config: FlowConfig, problem: FlowProblem | None = None):
    """One Crank-Nicolson step of configured length ``dt`` (see FlowConfig.time_normalization)."""
    if not config.dt_min <= dt <= config.dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt} outside [{config.dt_min}, {config.dt_max}]")
    problem = problem or FlowProblem.from_config(config)
    return problem.step(state, config.u_time(dt))


@dataclass
class Trajectory:
    problem: FlowProblem
    config: FlowConfig
    states: list
    reports: list
    blowup: BlowUpDetected | None = None

    @property
    def data(self) -> ConformalData:
        return self.problem.data

    @property
    def final(self) -> FlowState:
        return self.states[-1]

    def times_u(self) -> np.ndarray:
        return np.array([s.t_u for s in self.states])

    def envelope_ok(self) -> bool:
        return all(rep.envelope_ok for rep in self.reports)


def evolve(config: FlowConfig, data: ConformalData | None = None,
           problem: FlowProblem | None = None, raise_on_blowup: bool = True) -> Trajectory:
    """Adaptive-step integration to t_end; states recorded every stride steps.

    dt is halved on Newton failure and grown by 1.2 (up to dt_max) after
    steps that converged in at most two Newton iterations.  With
    dt_init = dt_max the step is fixed, which is what the refinement
    studies use.  The last step is shortened to land on t_end.
    """
    problem = problem or FlowProblem.from_config(config, data)
    scale = config.clock_scale
    state = problem.initial_state()
    states = [state]
    reports = []
    t_end = config.t_end_u
    dt = config.dt_init * scale
    dt_min, dt_max = config.dt_min * scale, config.dt_max * scale
    accepted = 0
    while t_end - state.t_u > 1e-12 * max(1.0, t_end):
        h = min(dt, t_end - state.t_u)
        try:
            new, rep = problem.step(state, h)
        except StepRejected as exc:
            dt = 0.5 * dt
            log.debug("step rejected at t_u=%g: %s", state.t_u, exc)
            if dt < dt_min:
                err = BlowUpDetected(f"step size fell below dt_min at t_u={state.t_u:.6g}",
                                     state=state, t_max=state.t_u)
                return _finish(problem, config, states, reports, err, raise_on_blowup)
            continue
        except BlowUpDetected as exc:
            return _finish(problem, config, states, reports, exc, raise_on_blowup)
        if abs(new.t_u - t_end) <= 1e-12 * max(1.0, t_end):
            new = replace(new, t_u=t_end)
        state = new
        reports.append(rep)
        accepted += 1
        if accepted % config.diagnostics_stride == 0 or state.t_u >= t_end:
            if states[-1] is not state:
                states.append(state)
        if rep.newton_iterations <= 2 and h == dt:
            dt = min(1.2 * dt, dt_max)
    if states[-1] is not state:
        states.append(state)
    return Trajectory(problem, config, states, reports)


def _finish(problem, config, states, reports, err, raise_on_blowup):
    traj = Trajectory(problem, config, states, reports, blowup=err)
    err.trajectory = traj
    if raise_on_blowup:
        raise err
    return traj


def restrict(data: ConformalData, radius: float) -> ConformalData:
    """Data on the ball B(0, radius), cut at the nearest node."""
    sub = data.grid.truncated(radius)
    k = sub.size
    R0 = None if data.R0 is None else np.asarray(data.R0)[:k]
    return ConformalData(sub, data.w0[:k], None, R0, data.label, data.v[:k],
                         data.w0_excess[:k])


@dataclass
class ExhaustionResult:
    radii: list
    trajectories: list
    full: Trajectory
    distance_to_full: list
    consecutive_distance: list
    distance_on_ball: list
    ratio_max: list
    envelope_ok: list


def exhaustion_solve(config: FlowConfig, domain_radii, data: ConformalData | None = None,
                     full: Trajectory | None = None) -> ExhaustionResult:
    """Dirichlet problems u = 1 on B(0, m_k) compared with the full-domain run.

    Distances are sup norms over the common half ball B(0, m_k / 2) at the
    final time; ``distance_on_ball`` uses the whole ball B(0, m_k), where the
    boundary effect is largest.  ``ratio_max`` is the largest u(t)/u(t0) over recorded
    t > t0 (equal to 1 + a rounding floor when u is nonincreasing).
    """
    radii = [float(m) for m in domain_radii]
    if len(radii) < 2:
        raise ValueError("exhaustion needs at least two domain radii")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("domain radii must be increasing")
    if radii[-1] > config.grid.r_max * (1 + 1e-12):
        raise ValueError("domain radii must not exceed R_max")
    if data is None:
        data = config.initial.build(config.grid, config.constants)
    if full is None:
        full = evolve(config, data)
    trajs, dist, whole, ratio, env = [], [], [], [], []
    for m in radii:
        sub = restrict(data, m)
        cfg = replace(config, grid=sub.grid, outer_bc="dirichlet_one")
        traj = evolve(cfg, sub)
        trajs.append(traj)
        ball = sub.grid.r <= 0.5 * m
        diff = np.abs(traj.final.v - full.final.v[:sub.grid.size])
        dist.append(float(np.max(diff[ball])))
        whole.append(float(np.max(diff)))
        ratio.append(monotone_ratio(traj))
        env.append(traj.envelope_ok())
    consecutive = []
    for k in range(1, len(trajs)):
        a, b = trajs[k - 1], trajs[k]
        ball = a.problem.grid.r <= 0.5 * radii[k - 1]
        consecutive.append(float(np.max(np.abs(a.final.v[ball] - b.final.v[:a.problem.grid.size][ball]))))
    return ExhaustionResult(radii, trajs, full, dist, consecutive, whole, ratio, env)


def monotone_ratio(traj: Trajectory) -> float:
    """max over recorded t0 < t of u(t) / u(t0)."""
    worst = 0.0
    U = np.array([s.u for s in traj.states])
    for j in range(len(U) - 1):
        worst = max(worst, float(np.max(U[j + 1:] / U[j])))
    return worst


@dataclass(frozen=True)
class FineSolutionReport:
    min_u: float
    max_u: float
    argmin_r: float
    sup_grad_u: float
    sup_rm: float
    passed: bool
    failures: tuple


def curvature_norm(data: ConformalData, c: DimensionalConstants) -> np.ndarray:
    """|Rm(g)| for g = U^(4/(n-2)) delta."""
    ric_rad, ric_tan = ricci_eigenvalues(data.U, data.grid, c)
    R = data.scalar_curvature(c)
    return riemann_norm_lcf(ric_rad, ric_tan, R, c)


def fine_solution_monitor(state: FlowState, config: FlowConfig,
                          data: ConformalData) -> FineSolutionReport:
    """Two-sided bounds on u, |grad u|_{g0} and |Rm(g)| against configured caps."""
    c = config.constants
    u = np.asarray(state.u, dtype=float)
    r = data.grid.r
    k = int(np.argmin(u))
    failures = []
    if not np.all(np.isfinite(u)) or u[k] <= 0:
        return FineSolutionReport(float(u[k]), float(np.max(u)), float(r[k]), math.nan,
                                  math.nan, False, (f"u not positive at r={r[k]:.6g}",))
    du, _ = data.grid.derivatives(u)
    grad = float(np.max(np.abs(du) * data.w0 ** (-2.0 / (c.n - 2))))
    rm = float(np.max(curvature_norm(data.with_v(state.v), c)))
    if u[k] < config.delta_run:
        failures.append(f"min u {u[k]:.3e} < delta_run at r={r[k]:.6g}")
    if np.max(u) > config.C_run:
        failures.append(f"max u {np.max(u):.3e} > C_run")
    if not grad <= config.grad_cap:
        failures.append(f"|grad u| {grad:.3e} exceeds cap")
    if not rm <= config.curvature_cap:
        failures.append(f"|Rm| {rm:.3e} exceeds cap")
    return FineSolutionReport(float(u[k]), float(np.max(u)), float(r[k]), grad, rm,
                              not failures, tuple(failures))


def write_snapshots(traj: Trajectory, path) -> None:
    """Long-form CSV ``t_u,t_geom,r,u``."""
    r = traj.data.grid.r
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_u", "t_geom", "r", "u"])
        for s in traj.states:
            for ri, ui in zip(r, s.u):
                w.writerow([repr(s.t_u), repr(s.t_geom), repr(float(ri)), repr(float(ui))])
