"""Simultaneous (h, dt) halving studies.

Each level halves the stretched-grid spacing (same map, twice the nodes)
and the time step.  Steps are fixed (dt_init = dt_max) and every step is
recorded, so residuals can be evaluated at the same physical times on every
level.  Four quantities are tracked:

    final_state       sup |v_l - v_{l+1}| on the coarse nodes with r < R_max/2
    scalar_residual   max over check times of the sup residual of the R equation
    balance_residual  max over check times of the dissipation-identity residual
    mass_drift        successive differences of the relative mass drift

Orders are log2 of successive ratios.  A quantity whose values are all at
the rounding floor is reported as exact.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .diagnostics import (UnreliableLimitWarning, adm_mass_extrapolate, adm_mass_ladder,
                          balance_residual, make_record, scalar_evolution_residual)
from .solver import FlowConfig, Trajectory, evolve

QUANTITIES = ("final_state", "scalar_residual", "balance_residual", "mass_drift")
ROUNDING_FLOOR = 1e-13


@dataclass
class LevelResult:
    level: int
    n_nodes: int
    h0: float
    dt: float
    trajectory: Trajectory
    scalar_residual: float
    balance_residual: float
    balance_scale: float
    mass_initial: float
    mass_final: float

    @property
    def mass_drift(self) -> float:
        if self.mass_initial == 0:
            return self.mass_final
        return (self.mass_final - self.mass_initial) / self.mass_initial


@dataclass
class QuantityOrders:
    name: str
    values: list
    orders: list
    exact: bool

    @property
    def min_order(self) -> float:
        if self.exact:
            return math.inf
        finite = [o for o in self.orders if not math.isnan(o)]
        return min(finite) if finite else math.nan


@dataclass
class ConvergenceReport:
    levels: list
    quantities: dict
    check_times: np.ndarray


def _extrapolated_mass(data, c):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnreliableLimitWarning)
        return adm_mass_extrapolate(adm_mass_ladder(data, c)).value


def check_times(config: FlowConfig, count: int = 9) -> np.ndarray:
    """Geometric times spread over the interior of [0, t_end]."""
    t_end_geom = config.t_end_u / config.constants.c_n
    return np.linspace(0.1, 0.9, count) * t_end_geom


def run_level(config: FlowConfig, level: int, times, data=None) -> LevelResult:
    c = config.constants
    traj = evolve(config, data)
    t = np.array([s.t_geom for s in traj.states])
    sres, bal, scale = [], [], []
    for tc in times:
        k = int(np.argmin(np.abs(t - tc)))
        k = min(max(k, 1), len(traj.states) - 2)
        window = traj.states[k - 1:k + 2]
        sres.append(float(np.max(np.abs(scalar_evolution_residual(window, traj.data, c, k=1)))))
        recs = [make_record(s, traj.data, c, traj.problem.sup_R0) for s in window]
        terms = balance_residual(recs, 1, c)
        bal.append(terms.residual)
        scale.append(abs(terms.dissipation))
    m0 = _extrapolated_mass(traj.data, c)
    m1 = _extrapolated_mass(traj.data.with_v(traj.final.v), c)
    return LevelResult(level, config.grid.size, config.grid.h0, config.dt_max, traj,
                       max(sres), max(bal), max(scale), m0, m1)


def _orders(values):
    out = []
    for a, b in zip(values, values[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else math.nan)
    return out


def _quantity(name, values, scale=1.0):
    exact = all(abs(v) <= ROUNDING_FLOOR * max(1.0, scale) for v in values)
    return QuantityOrders(name, list(values), [] if exact else _orders(values), exact)


def _final_state_differences(levels):
    base = levels[0].trajectory.data.grid.r
    mask = base < levels[0].trajectory.data.grid.r_max / 2
    x = base[mask]
    samples = []
    for lev in levels:
        r = lev.trajectory.data.grid.r
        samples.append(CubicSpline(r, lev.trajectory.final.v)(x))
    return [float(np.max(np.abs(a - b))) for a, b in zip(samples, samples[1:])]


def convergence_study(config_for_level, levels: int, data_for_level=None) -> ConvergenceReport:
    """Run ``levels`` refinement levels.

    ``config_for_level(l)`` returns the FlowConfig of level l (0 = baseline);
    fixed steps and per-step recording are enforced here.
    """
    if not 2 <= levels <= 5:
        raise ValueError(f"levels must lie in [2, 5], got {levels}")
    results = []
    times = None
    for lev in range(levels):
        cfg = config_for_level(lev)
        cfg = replace(cfg, dt_init=cfg.dt_max, diagnostics_stride=1)
        if times is None:
            times = check_times(cfg)
        data = None if data_for_level is None else data_for_level(lev, cfg)
        results.append(run_level(cfg, lev, times, data))
    drifts = [r.mass_drift for r in results]
    q = {
        "final_state": _quantity("final_state", _final_state_differences(results)),
        "scalar_residual": _quantity("scalar_residual", [r.scalar_residual for r in results]),
        "balance_residual": _quantity("balance_residual", [r.balance_residual for r in results],
                                      max(r.balance_scale for r in results)),
        "mass_drift": _quantity("mass_drift",
                                [abs(a - b) for a, b in zip(drifts, drifts[1:])]),
    }
    return ConvergenceReport(results, q, times)


def balance_bound(level: LevelResult, factor: float = 5.0) -> float:
    """factor (h^2 + dt_geom^2) scale, with h the inner spacing and scale the size
    of the dissipation term."""
    c = level.trajectory.config.constants
    dt_geom = level.trajectory.config.u_time(level.dt) / c.c_n
    return factor * (level.h0**2 + dt_geom**2) * level.balance_scale
