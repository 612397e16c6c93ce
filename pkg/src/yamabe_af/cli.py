"""Command line entry point ``yamabe-af``.

    yamabe-af run CONFIG --out DIR [--figures]
    yamabe-af convergence CONFIG --levels L --out DIR [--figures]
    yamabe-af compare-exhaustion CONFIG --radii R1 R2 ... --out DIR
    yamabe-af norms TRAJECTORY --spec variant:beta:q:k[:alpha] ... --out FILE

Exit codes: 0 pass, 1 usage or config error, 2 hypothesis violation
detected, 3 blow-up detected.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .diagnostics import (UnreliableLimitWarning, analyze, gradient_estimate_monitor,
                          positivity_monitor)
from .geometry import DimensionalConstants, GeometryDomainError
from .initial_data import InitialDataError, verify_nonneg_scalar
from .norms import (NormDomainError, SpaceTimeField, decay_exponent_fit, parse_norm_spec,
                    weighted_norm, write_norm_report)
from .refinement import QUANTITIES, balance_bound, convergence_study
from .solver import exhaustion_solve, evolve, fine_solution_monitor

log = logging.getLogger("yamabe_af")

EXIT_OK, EXIT_ERROR, EXIT_HYPOTHESIS, EXIT_BLOWUP = 0, 1, 2, 3

DIAGNOSTICS_COLUMNS = (["t_u", "t_geom"] + [f"mass_r{j}" for j in range(1, 6)]
                       + ["mass_extrap", "eh", "r2", "min_R", "scalar_res", "balance_res",
                          "decay_exp", "env_lo", "env_hi", "min_u", "max_u"])
TRAJECTORY_COLUMNS = ("t_u", "t_geom", "r", "u", "U", "R")
CONVERGENCE_COLUMNS = ("quantity", "level", "n_nodes", "dt", "value", "order")
EXHAUSTION_COLUMNS = ("k", "radius", "n_nodes", "distance_to_full", "consecutive_distance",
                      "distance_on_ball", "ratio_max", "envelope_ok")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _atomic_write(path: Path, write) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_writer(rows, header):
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return write


def write_trajectory_csv(traj, path, stride: int = 1) -> None:
    c = traj.config.constants
    r = traj.data.grid.r
    picks = list(range(0, len(traj.states), stride))
    if picks[-1] != len(traj.states) - 1:
        picks.append(len(traj.states) - 1)

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for k in picks:
            s = traj.states[k]
            d = traj.data.with_v(s.v)
            R = d.scalar_curvature(c)
            tu, tg = _fmt(s.t_u), _fmt(s.t_geom)
            for row in zip(r, d.u, d.U, R):
                w.writerow([tu, tg] + [_fmt(x) for x in row])
    _atomic_write(path, write)


def write_diagnostics_csv(records, path) -> None:
    rows = []
    for rec in records:
        rows.append([_fmt(x) for x in (
            rec.t_u, rec.t_geom, *(m for _, m in rec.mass_ladder), rec.mass_extrapolated,
            rec.eh_functional, rec.r2_integral, rec.min_R, rec.scalar_residual_sup, rec.balance_residual,
            rec.decay_exponent_v, rec.env_lo, rec.env_hi, rec.min_u, rec.max_u)])
    _atomic_write(path, _csv_writer(rows, DIAGNOSTICS_COLUMNS))


def _write_manifest(out_dir: Path, cfg: RunConfig | None, command: str, started: float,
                    outputs: list, monitors: dict, status: str, extra=None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": None if cfg is None else cfg.resolved,
        "config_source": None if cfg is None else cfg.source,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "wall_seconds": round(time.time() - started, 3),
        "outputs": outputs,
        "monitors": monitors,
        "status": status,
    }
    if extra:
        manifest.update(extra)

    def write(fh):
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    _atomic_write(out_dir / "manifest.json", write)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not serialisable: {type(x).__name__}")


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


# ---------------------------------------------------------------- run


def _build_data(cfg: RunConfig, fc):
    try:
        return fc.initial.build(fc.grid, fc.constants)
    except (InitialDataError, GeometryDomainError) as exc:
        raise ConfigError(f"initial_data: {exc}") from exc


def _hypotheses(data, c):
    rep = verify_nonneg_scalar(data, c)
    return {"nonneg_base_curvature": {"passed": rep.passed, "min_R0": rep.min_R,
                                      "tolerance": rep.tolerance, "argmin_r": rep.argmin_r,
                                      "l1_norm": rep.l1_norm}}


def _run_monitors(cfg: RunConfig, traj, records) -> dict:
    c = traj.config.constants
    mon = cfg.resolved["monitors"]
    out = {}
    slack = mon["envelope_slack"]
    env = all(rec.min_u >= rec.env_lo - slack and rec.max_u <= rec.env_hi + slack
              for rec in records)
    out["envelope"] = {"passed": env, "slack": slack}
    eh = np.array([rec.eh_functional for rec in records])
    rise = float(np.max(np.diff(eh))) if eh.size > 1 else 0.0
    out["eh_nonincreasing"] = {"passed": rise <= mon["eh_slack"], "max_increase": rise,
                               "slack": mon["eh_slack"]}
    m = np.array([rec.mass_extrapolated for rec in records])
    drift = float(np.max(np.abs(m - m[0]))) / (abs(m[0]) if m[0] != 0 else 1.0)
    out["mass_constant"] = {"passed": drift <= mon["mass_drift_tol"], "relative_drift": drift,
                            "tolerance": mon["mass_drift_tol"]}
    pos = positivity_monitor(traj, c, mon["positivity_tol"])
    out["positivity"] = {"passed": pos.passed, "min_R": pos.min_R, "tolerance": pos.tolerance,
                         "t_u_at_min": pos.t_at_min, "r_at_min": pos.r_at_min,
                         "applies": pos.hypothesis_ok}
    fine = fine_solution_monitor(traj.final, traj.config, traj.data)
    out["fine_solution"] = {"passed": fine.passed, "min_u": fine.min_u, "max_u": fine.max_u,
                            "sup_grad_u": _json_float(fine.sup_grad_u),
                            "sup_rm": _json_float(fine.sup_rm), "failures": list(fine.failures)}
    ball = cfg.resolved["diagnostics"]["gradient_ball_radius"]
    if ball is not None:
        g = gradient_estimate_monitor(traj, ball, c, cfg.resolved["diagnostics"]["c_prime"])
        out["gradient_estimate"] = {"informational": True, "K": g.K, "ratio_max": g.ratio_max,
                                    "g_residual_max": _json_float(g.g_residual_max),
                                    "positive_fraction": _json_float(g.positive_fraction)}
    return out


def cmd_run(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    out = Path(args.out)
    fc = cfg.flow_config()
    c = fc.constants
    data = _build_data(cfg, fc)
    hyp = _hypotheses(data, c)
    traj = evolve(fc, data, raise_on_blowup=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnreliableLimitWarning)
        window = cfg.decay_window(fc.grid.r_max)
        records = analyze(traj, window)
    outputs = []
    write_trajectory_csv(traj, out / "trajectory.csv",
                         cfg.resolved["diagnostics"]["snapshot_stride"])
    write_diagnostics_csv(records, out / "diagnostics.csv")
    outputs += [str(out / "trajectory.csv"), str(out / "diagnostics.csv")]
    monitors = _run_monitors(cfg, traj, records) if len(records) else {}
    monitors["hypotheses"] = hyp
    if args.figures and len(records) > 1:
        from .plots import run_figures
        outputs += run_figures(records, traj, out)
    hyp_ok = all(h["passed"] for h in hyp.values())
    hard = [k for k, v in monitors.items()
            if k != "hypotheses" and not v.get("informational")
            and not (k == "positivity" and not v.get("applies"))]
    failed = [k for k in hard if not monitors[k]["passed"]]
    if traj.blowup is not None:
        status, code = f"blow-up: {traj.blowup}", EXIT_BLOWUP
    elif not hyp_ok:
        status, code = "hypothesis violation: " + ", ".join(
            k for k, h in hyp.items() if not h["passed"]), EXIT_HYPOTHESIS
    elif failed:
        status, code = "invariant failure: " + ", ".join(failed), EXIT_ERROR
    else:
        status, code = "pass", EXIT_OK
    _write_manifest(out, cfg, "run", started, outputs + [str(out / "manifest.json")],
                    monitors, status)
    print(f"run: {status}")
    return code


# ---------------------------------------------------------------- convergence


def cmd_convergence(args) -> int:
    started = time.time()
    if not 2 <= args.levels <= 5:
        raise UsageError(f"--levels must lie in [2, 5], got {args.levels}")
    cfg = load_config(args.config)
    out = Path(args.out)
    cfg.flow_config()
    report = convergence_study(cfg.flow_config, args.levels)
    rows = []
    for name in QUANTITIES:
        q = report.quantities[name]
        for j, value in enumerate(q.values):
            lev = report.levels[j]
            order = "exact" if q.exact else ("" if j == 0 else _fmt(q.orders[j - 1]))
            rows.append([name, j, lev.n_nodes, _fmt(lev.dt), _fmt(value), order])
        rows.append([name, "min", "", "", "", "exact" if q.exact else _fmt(q.min_order)])
    _atomic_write(out / "convergence.csv", _csv_writer(rows, CONVERGENCE_COLUMNS))
    outputs = [str(out / "convergence.csv")]
    if args.figures:
        from .plots import convergence_figure
        outputs.append(convergence_figure(report, out))
    base = report.levels[0]
    bound = balance_bound(base)
    summary = {name: ("exact" if q.exact else _json_float(q.min_order))
               for name, q in report.quantities.items()}
    blow = [lev.level for lev in report.levels if lev.trajectory.blowup is not None]
    _write_manifest(out, cfg, "convergence", started, outputs + [str(out / "manifest.json")],
                    {"orders": summary,
                     "baseline_balance": {"residual": base.balance_residual, "bound": bound,
                                          "passed": base.balance_residual <= bound}},
                    "blow-up" if blow else "done",
                    {"levels": args.levels, "check_times_geom": list(report.check_times),
                     "fixed_step": True, "record_stride": 1})
    for name in QUANTITIES:
        print(f"{name}: order {summary[name]}")
    return EXIT_BLOWUP if blow else EXIT_OK


# ---------------------------------------------------------------- exhaustion


def cmd_compare_exhaustion(args) -> int:
    started = time.time()
    if len(args.radii) < 2:
        raise UsageError("compare-exhaustion needs at least two radii")
    cfg = load_config(args.config)
    out = Path(args.out)
    fc = cfg.flow_config()
    data = _build_data(cfg, fc)
    try:
        res = exhaustion_solve(fc, args.radii, data)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = []
    for k, (m, traj) in enumerate(zip(res.radii, res.trajectories)):
        cons = _fmt(res.consecutive_distance[k - 1]) if k > 0 else ""
        rows.append([k, _fmt(m), traj.data.grid.size, _fmt(res.distance_to_full[k]), cons,
                     _fmt(res.distance_on_ball[k]), _fmt(res.ratio_max[k]),
                     int(res.envelope_ok[k])])
    _atomic_write(out / "exhaustion.csv", _csv_writer(rows, EXHAUSTION_COLUMNS))
    d = res.distance_to_full
    decreasing = all(b <= a for a, b in zip(d, d[1:])) and (d[-1] < d[0] or d[0] == 0)
    env = all(res.envelope_ok)
    ratio_ok = all(x <= 1 + 1e-10 for x in res.ratio_max)
    passed = decreasing and env
    _write_manifest(out, cfg, "compare-exhaustion", started,
                    [str(out / "exhaustion.csv"), str(out / "manifest.json")],
                    {"distances_decrease": decreasing, "envelopes": env,
                     "monotone_ratio_le_one": ratio_ok},
                    "pass" if passed else "fail", {"radii": res.radii})
    print(f"exhaustion: distances {['%.3e' % x for x in d]}, "
          f"{'pass' if passed else 'fail'}")
    return EXIT_OK if passed else EXIT_ERROR


# ---------------------------------------------------------------- norms


def read_trajectory_csv(path):
    """Returns (times_u, times_geom, r, u[nt, nr]) from a trajectory.csv."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header[:4]) != TRAJECTORY_COLUMNS[:4]:
                raise UsageError(f"{path}: not a trajectory file (header {header})")
            rows = [[float(x) for x in row[:4]] for row in reader if row]
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise UsageError(f"{path}: malformed value ({exc})") from exc
    if not rows:
        raise UsageError(f"{path}: no data rows")
    a = np.array(rows)
    tu = np.unique(a[:, 0])
    nr = int(np.sum(a[:, 0] == tu[0]))
    if a.shape[0] != nr * tu.size:
        raise UsageError(f"{path}: snapshots have unequal lengths")
    a = a[np.lexsort((a[:, 2], a[:, 0]))]
    r = a[:nr, 2]
    if not np.all(a[:, 2].reshape(tu.size, nr) == r):
        raise UsageError(f"{path}: snapshots use different radii")
    tg = a[::nr, 1]
    return tu, tg, r, a[:, 3].reshape(tu.size, nr)


def _dimension_for(path, given):
    if given is not None:
        return given
    manifest = Path(path).parent / "manifest.json"
    if manifest.exists():
        try:
            return int(json.loads(manifest.read_text())["config"]["dimension"])
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{manifest}: no dimension recorded") from exc
    raise UsageError("--dimension is required when no manifest.json accompanies the trajectory")


def cmd_norms(args) -> int:
    started = time.time()
    specs = [parse_norm_spec(s) for s in args.spec]
    n = _dimension_for(args.trajectory, args.dimension)
    DimensionalConstants(n)
    tu, tg, r, u = read_trajectory_csv(args.trajectory)
    v = 1.0 - u
    window = tuple(args.window) if args.window else (r[-1] / 100, r[-1] / 2)
    decay = [decay_exponent_fit(vk, r, window) for vk in v]
    rows = []
    for spec in specs:
        if spec.parabolic:
            f = SpaceTimeField(r, tg, v, n)
            value, density = weighted_norm(f, spec)
            rows.append((tu[-1], tg[-1], spec, value, density, decay[-1].exponent))
            continue
        for k in range(tu.size):
            f = SpaceTimeField.static(r, v[k], n)
            value, density = weighted_norm(f, spec)
            rows.append((tu[k], tg[k], spec, value, density, decay[k].exponent))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_norm_report(rows, out)
    print(f"norms: {len(rows)} rows written to {out} ({time.time() - started:.2f} s)")
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="yamabe-af", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("run", help="evolve one configuration")
    q.add_argument("config")
    q.add_argument("--out", required=True)
    q.add_argument("--figures", action="store_true", help="also write PNG figures")
    q.set_defaults(func=cmd_run)

    q = sub.add_parser("convergence", help="refinement study with measured orders")
    q.add_argument("config")
    q.add_argument("--levels", type=int, default=3)
    q.add_argument("--out", required=True)
    q.add_argument("--figures", action="store_true")
    q.set_defaults(func=cmd_convergence)

    q = sub.add_parser("compare-exhaustion", help="Dirichlet balls against the full run")
    q.add_argument("config")
    q.add_argument("--radii", type=float, nargs="+", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_compare_exhaustion)

    q = sub.add_parser("norms", help="weighted norms of v = 1 - u from a trajectory.csv")
    q.add_argument("trajectory")
    q.add_argument("--spec", action="append", required=True,
                   help="variant:beta:q:k[:alpha], repeatable")
    q.add_argument("--out", required=True)
    q.add_argument("--dimension", type=int)
    q.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    q.set_defaults(func=cmd_norms)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "figures", False):
            try:
                import matplotlib  # noqa: F401
            except ImportError:
                raise UsageError("--figures needs matplotlib (pip install artifact[figures])")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:
        # --help and --version
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, NormDomainError, GeometryDomainError,
            InitialDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
