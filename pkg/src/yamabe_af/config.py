"""JSON run configurations.

``SCHEMA`` is a JSON Schema listing every key with its type, bounds and
default; unknown keys are rejected.  The resolved dictionary (defaults
written in) is what the run manifest echoes, so a manifest alone
reproduces a run.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .geometry import DimensionalConstants
from .grid import GridError, RadialGrid
from .initial_data import KINDS, InitialDataError, InitialDataSpec
from .solver import OUTER_BCS, TIME_NORMALIZATIONS, FlowConfig


class ConfigError(ValueError):
    """Schema violation; the message names the offending field."""


def _num(default=None, minimum=None, exclusive=None, nullable=False):
    t = ["number", "null"] if nullable else "number"
    out = {"type": t}
    if minimum is not None:
        out["minimum"] = minimum
    if exclusive is not None:
        out["exclusiveMinimum"] = exclusive
    if default is not None or nullable:
        out["default"] = default
    return out


def _int(default=None, minimum=None):
    out = {"type": "integer", "minimum": minimum}
    if default is not None:
        out["default"] = default
    return out


def _section(properties, required=()):
    return {"type": "object", "properties": properties, "required": list(required),
            "additionalProperties": False, "default": {}}


SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dimension", "grid", "initial_data", "time"],
    "properties": {
        "dimension": _int(minimum=3),
        "grid": _section({
            "n_nodes": _int(minimum=16),
            "h0": _num(exclusive=0),
            "r_max": _num(exclusive=0),
        }, ["n_nodes", "h0", "r_max"]),
        "initial_data": _section({
            "kind": {"enum": list(KINDS)},
            "mass": _num(minimum=0, nullable=True),
            "amplitude": _num(minimum=0, nullable=True),
            "r_center": _num(exclusive=0, nullable=True),
            "width": _num(exclusive=0, nullable=True),
            "path": {"type": ["string", "null"], "default": None},
            "nominal_tau": _num(exclusive=0, nullable=True),
        }, ["kind"]),
        "time": _section({
            "t_end": _num(exclusive=0),
            "normalization": {"enum": list(TIME_NORMALIZATIONS), "default": "geometric"},
            "dt_init": _num(exclusive=0),
            "dt_min": _num(1e-9, exclusive=0),
            "dt_max": _num(exclusive=0),
        }, ["t_end", "dt_init", "dt_max"]),
        "solver": _section({
            "outer_bc": {"enum": list(OUTER_BCS), "default": "robin_decay"},
            "newton_tol": _num(1e-11, exclusive=0),
            "newton_max_iter": _int(30, minimum=1),
        }),
        "monitors": _section({
            "delta_run": _num(1e-6, exclusive=0),
            "C_run": _num(1e3, exclusive=0),
            "grad_cap": _num(1e8, exclusive=0),
            "curvature_cap": _num(1e8, exclusive=0),
            "positivity_tol": _num(1e-8, minimum=0),
            "envelope_slack": _num(1e-9, minimum=0),
            "eh_slack": _num(1e-9, minimum=0),
            "mass_drift_tol": _num(1e-3, minimum=0),
        }),
        "diagnostics": _section({
            "stride": _int(1, minimum=1),
            "decay_window": {"type": ["array", "null"], "items": {"type": "number"},
                             "minItems": 2, "maxItems": 2, "default": None},
            "gradient_ball_radius": _num(exclusive=0, nullable=True),
            "c_prime": _num(289.0, exclusive=0),
            "snapshot_stride": _int(10, minimum=1),
        }),
    },
}


def _validate(raw):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = ".".join(str(p) for p in e.absolute_path) or "config"
        if e.validator == "required":
            missing = [k for k in e.validator_value if k not in e.instance]
            prefix = f"{where}." if e.absolute_path else ""
            raise ConfigError(f"{prefix}{missing[0]}: required field missing")
        raise ConfigError(f"{where}: {e.message}")


def _fill_defaults(raw, schema):
    """Copy of ``raw`` with every schema default written in."""
    out = dict(raw)
    for key, sub in schema.get("properties", {}).items():
        if key not in out and "default" in sub:
            out[key] = copy.deepcopy(sub["default"])
        if sub.get("type") == "object" and key in out:
            out[key] = _fill_defaults(out[key], sub)
        elif key in out and out[key] is not None and sub.get("type") == "integer":
            out[key] = int(out[key])
        elif key in out and isinstance(out[key], int) \
                and sub.get("type") in ("number", ["number", "null"]):
            out[key] = float(out[key])
    return out


@dataclass(frozen=True)
class RunConfig:
    """A resolved configuration plus the objects built from it."""

    resolved: dict
    source: str | None = None

    @property
    def constants(self) -> DimensionalConstants:
        return DimensionalConstants(self.resolved["dimension"])

    def grid(self, refine: int = 0) -> RadialGrid:
        g = self.resolved["grid"]
        try:
            grid = RadialGrid.stretched(g["n_nodes"], g["h0"], g["r_max"])
            for _ in range(refine):
                grid = grid.refined(2)
        except GridError as exc:
            raise ConfigError(f"grid: {exc}") from exc
        return grid

    def initial_spec(self) -> InitialDataSpec:
        d = self.resolved["initial_data"]
        path = d["path"]
        if path is not None and self.source is not None and not Path(path).is_absolute():
            path = str(Path(self.source).parent / path)
        try:
            return InitialDataSpec(d["kind"], d["mass"], d["amplitude"], d["r_center"],
                                   d["width"], path, d["nominal_tau"])
        except InitialDataError as exc:
            raise ConfigError(f"initial_data: {exc}") from exc

    def flow_config(self, refine: int = 0) -> FlowConfig:
        t, s, m = self.resolved["time"], self.resolved["solver"], self.resolved["monitors"]
        f = 0.5 ** refine
        try:
            return FlowConfig(
                self.constants, self.grid(refine), self.initial_spec(), t["t_end"],
                t["dt_init"] * f, min(t["dt_min"], t["dt_init"] * f), t["dt_max"] * f,
                newton_tol=s["newton_tol"], newton_max_iter=s["newton_max_iter"],
                outer_bc=s["outer_bc"], diagnostics_stride=self.resolved["diagnostics"]["stride"],
                time_normalization=t["normalization"], delta_run=m["delta_run"],
                C_run=m["C_run"], grad_cap=m["grad_cap"], curvature_cap=m["curvature_cap"])
        except ValueError as exc:
            raise ConfigError(f"time/solver: {exc}") from exc

    def decay_window(self, r_max: float):
        w = self.resolved["diagnostics"]["decay_window"]
        if w is None:
            return (r_max / 100, r_max / 2)
        if len(w) != 2 or not all(isinstance(x, (int, float)) for x in w) or not 0 < w[0] < w[1]:
            raise ConfigError("diagnostics.decay_window: expected [lo, hi] with 0 < lo < hi")
        return (float(w[0]), float(w[1]))


def resolve(raw: dict, source: str | None = None) -> RunConfig:
    _validate(raw)
    cfg = RunConfig(_fill_defaults(raw, SCHEMA), source)
    # fail early on parameter combinations that only the builders check
    cfg.initial_spec()
    cfg.flow_config()
    cfg.decay_window(cfg.resolved["grid"]["r_max"])
    n, tau = cfg.resolved["dimension"], cfg.resolved["initial_data"]["nominal_tau"]
    # every run reports the ADM mass, which needs decay faster than r^(-(n-2)/2)
    if tau is not None and not tau > (n - 2) / 2:
        raise ConfigError(f"initial_data.nominal_tau: must exceed (n-2)/2 = {(n - 2) / 2:g}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return resolve(raw, str(path))
