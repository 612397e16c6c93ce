"""Weighted Lebesgue, Sobolev and Hoelder norms of radial (space-time) fields.

Integrals use the measure omega r^(n-1) dr (times dt) with trapezoid weights,
which are positive, so the discrete norms are genuine weighted l^q norms:
homogeneity, the triangle inequality, monotonicity in |v| and the Hoelder
product inequality hold exactly.

Derivative sizes D^j v of a radial function are the operator norms of the
Cartesian derivative tensors: |v'| for j = 1 and max(|v''|, |v'/r|) for j = 2.
Hoelder seminorms are suprema over a sampled pair set; the sampling density
(radii per decade, number of times) is returned alongside.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("elliptic", "parabolic_plain", "parabolic_tilde")


class NormDomainError(ValueError):
    pass


@dataclass(frozen=True)
class WeightSpec:
    beta: float
    q: float = math.inf
    k: int = 0
    alpha: float = 0.5
    variant: str = "elliptic"

    def __post_init__(self):
        if not self.q >= 1:
            raise NormDomainError(f"q must be >= 1, got {self.q}")
        if not 0 < self.alpha < 1:
            raise NormDomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.k) != self.k or self.k < 0:
            raise NormDomainError(f"k must be a nonnegative integer, got {self.k}")
        if self.variant not in VARIANTS:
            raise NormDomainError(f"variant must be one of {VARIANTS}")

    @property
    def parabolic(self) -> bool:
        return self.variant != "elliptic"


def _trapezoid_weights(x):
    x = np.asarray(x, dtype=float)
    if x.size == 1:
        return np.ones(1)
    w = np.zeros_like(x)
    d = np.diff(x)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


@dataclass(eq=False)
class SpaceTimeField:
    """Samples v(r_i, t_j), stored as values[j, i]."""

    r: np.ndarray
    t: np.ndarray
    values: np.ndarray
    n: int
    _tables: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.t = np.atleast_1d(np.asarray(self.t, dtype=float))
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.shape != (self.t.size, self.r.size):
            raise NormDomainError(f"values shape {v.shape} != ({self.t.size}, {self.r.size})")
        if not np.all(np.isfinite(v)):
            raise NormDomainError("field values must be finite")
        if np.any(self.r <= 0) or np.any(np.diff(self.r) <= 0):
            raise NormDomainError("radii must be positive and increasing")
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise NormDomainError("times must be increasing")
        self.values = v

    @classmethod
    def static(cls, r, values, n):
        return cls(r, [0.0], np.asarray(values, dtype=float)[None, :], n)

    def restrict(self, lo=None, hi=None) -> "SpaceTimeField":
        m = np.ones(self.r.size, dtype=bool)
        if lo is not None:
            m &= self.r >= lo
        if hi is not None:
            m &= self.r <= hi
        return SpaceTimeField(self.r[m], self.t, self.values[:, m], self.n)

    def measure(self, parabolic: bool) -> np.ndarray:
        """Quadrature weights of omega r^(n-1) dr (dt), shape (nt, nr)."""
        n = self.n
        omega = 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)
        wr = omega * self.r ** (n - 1) * _trapezoid_weights(self.r)
        wt = _trapezoid_weights(self.t) if parabolic and self.t.size > 1 else np.ones(self.t.size)
        return wt[:, None] * wr[None, :]

    def derivative(self, i: int, j: int = 0) -> np.ndarray:
        """D^i_x D^j_t v sampled like ``values`` (magnitudes for i >= 1)."""
        key = (i, j)
        if key not in self._tables:
            v = self.values
            for _ in range(j):
                if self.t.size < 3:
                    raise NormDomainError("time derivatives need at least 3 times")
                v = np.gradient(v, self.t, axis=0, edge_order=2)
            if i == 0:
                out = v
            else:
                if self.r.size < 3:
                    raise NormDomainError("space derivatives need at least 3 radii")
                d1 = np.gradient(v, self.r, axis=1, edge_order=2)
                if i == 1:
                    out = np.abs(d1)
                elif i == 2:
                    d2 = np.gradient(d1, self.r, axis=1, edge_order=2)
                    out = np.maximum(np.abs(d2), np.abs(d1 / self.r))
                else:
                    raise NormDomainError("spatial derivatives above order 2 are not supported")
            self._tables[key] = out
        return self._tables[key]

    def radii_per_decade(self) -> float:
        span = math.log10(self.r[-1] / self.r[0])
        return math.inf if span == 0 else self.r.size / span


def _as_field(v, r=None, n=None, t=None) -> SpaceTimeField:
    if isinstance(v, SpaceTimeField):
        return v
    if r is None or n is None:
        raise NormDomainError("plain arrays need radii r and dimension n")
    if t is None:
        return SpaceTimeField.static(r, v, n)
    return SpaceTimeField(r, t, v, n)


def lq_beta_from_values(values, f: SpaceTimeField, beta: float, q: float,
                        parabolic: bool) -> float:
    a = np.abs(np.asarray(values, dtype=float))
    if math.isinf(q):
        return float(np.max(a * f.r[None, :] ** (-beta)))
    w = f.measure(parabolic) * f.r[None, :] ** (-beta * q - f.n)
    return float(np.sum(a**q * w) ** (1.0 / q))


def lq_beta_norm(v, spec: WeightSpec | None = None, *, beta=None, q=None, r=None,
                 n=None, t=None) -> float:
    """(integral |v|^q r^(-beta q - n) dx [dt])^(1/q), or sup r^(-beta) |v| for q = inf."""
    if spec is None:
        spec = WeightSpec(beta=beta, q=q if q is not None else math.inf)
    f = _as_field(v, r, n, t)
    return lq_beta_from_values(f.values, f, spec.beta, spec.q, spec.parabolic)


def _index_pairs(f: SpaceTimeField, variant: str):
    """Radial pairs on the dyadic-annulus sampling scheme."""
    r = f.r
    band = np.floor(np.log2(r)).astype(int)
    pairs = []
    for b in np.unique(band):
        idx = np.flatnonzero(band == b)
        ii, jj = np.triu_indices(idx.size, k=1)
        pairs.append(np.stack([idx[ii], idx[jj]], axis=1))
        # cross-annulus neighbours
        nxt = idx[-1] + 1
        if nxt < r.size:
            pairs.append(np.array([[idx[-1], nxt]]))
    if not pairs:
        return np.zeros((0, 2), dtype=int)
    return np.concatenate(pairs)


def holder_seminorms(f: SpaceTimeField, spec: WeightSpec):
    """([v], <v>) for the spec's k, alpha, beta and variant.

    Elliptic and tilde brackets compare points at equal times.  The plain
    parabolic bracket also compares equal radii at different times and
    neighbouring nodes at neighbouring times, with delta = |x-y| + |t-s|^(1/2)
    (|x - y| is taken as |r_x - r_y|, its minimum over directions).
    The angle seminorm exists only for k >= 1.
    """
    k, alpha, beta = spec.k, spec.alpha, spec.beta
    pairs = _index_pairs(f, spec.variant)
    r = f.r
    bracket = 0.0
    jmax = k // 2 if spec.parabolic else 0
    terms = [(i, j) for i in range(k + 1) for j in range(jmax + 1) if i + 2 * j == k]
    for i, j in terms:
        D = f.derivative(i, j)
        if spec.variant == "parabolic_tilde":
            power = -beta + i + alpha
        else:
            power = -beta + i + 2 * j + alpha
        if pairs.size:
            a, b = pairs[:, 0], pairs[:, 1]
            wmin = np.minimum(r[a], r[b]) ** power
            diff = np.abs(D[:, a] - D[:, b])
            dist = np.abs(r[a] - r[b]) ** alpha
            bracket_ij = float(np.max(wmin * diff / dist))
        else:
            bracket_ij = 0.0
        if spec.variant == "parabolic_plain" and f.t.size > 1:
            ts = f.t
            for s in range(1, ts.size):
                dt = ts[s:] - ts[:-s]
                dist = np.sqrt(dt)[:, None] ** alpha
                same = np.abs(D[s:] - D[:-s]) * r[None, :] ** power / dist
                bracket_ij = max(bracket_ij, float(np.max(same)))
            # neighbouring nodes at neighbouring times
            dr = np.diff(r)
            dtt = np.diff(ts)
            delta = (dr[None, :] + np.sqrt(dtt)[:, None]) ** alpha
            wmin = r[:-1] ** power
            for A, B in ((D[1:, 1:], D[:-1, :-1]), (D[1:, :-1], D[:-1, 1:])):
                bracket_ij = max(bracket_ij, float(np.max(np.abs(A - B) * wmin / delta)))
        bracket += bracket_ij
    angle = 0.0
    if k >= 1 and spec.parabolic and f.t.size > 1:
        ts = f.t
        for i in range(k):
            for j in range(k // 2 + 1):
                if i + 2 * j != k - 1:
                    continue
                D = f.derivative(i, j)
                if spec.variant == "parabolic_tilde":
                    power = -beta + i
                else:
                    power = -beta + i + 2 * j + alpha + 1
                best = 0.0
                for s in range(1, ts.size):
                    dt = (ts[s:] - ts[:-s]) ** ((alpha + 1) / 2)
                    val = np.abs(D[s:] - D[:-s]) * r[None, :] ** power / dt[:, None]
                    best = max(best, float(np.max(val)))
                angle += best
    return bracket, angle


def ck_beta_norm(f: SpaceTimeField, spec: WeightSpec) -> float:
    total = 0.0
    for i in range(spec.k + 1):
        for j in range(spec.k // 2 + 1 if spec.parabolic else 1):
            if i + 2 * j > spec.k:
                continue
            shift = i if spec.variant == "parabolic_tilde" else i + 2 * j
            total += float(np.max(f.r[None, :] ** (-spec.beta + shift) * np.abs(f.derivative(i, j))))
    return total


@dataclass(frozen=True)
class HolderResult:
    value: float
    ck: float
    bracket: float
    angle: float
    radii_per_decade: float
    n_times: int


def holder_norm(v, spec: WeightSpec, *, r=None, n=None, t=None,
                min_radii_per_decade: float = 8.0) -> HolderResult:
    """C^{k+alpha}_beta norm (elliptic, plain parabolic or tilde)."""
    f = _as_field(v, r, n, t)
    if spec.parabolic and f.t.size < 2:
        raise NormDomainError("parabolic Hoelder norms need at least 2 times")
    density = f.radii_per_decade()
    if density < min_radii_per_decade:
        raise NormDomainError(
            f"insufficient sampling: {density:.2f} radii per decade < {min_radii_per_decade}")
    ck = ck_beta_norm(f, spec)
    bracket, angle = holder_seminorms(f, spec)
    return HolderResult(ck + bracket + angle, ck, bracket, angle, density, int(f.t.size))


def sobolev_norm(v, spec: WeightSpec, *, r=None, n=None, t=None) -> float:
    """W^{k,q}_beta (elliptic), W^{k,k/2,q}_beta (plain) or tilde-W (tilde)."""
    f = _as_field(v, r, n, t)
    total = 0.0
    for i in range(spec.k + 1):
        for j in range(spec.k // 2 + 1 if spec.parabolic else 1):
            if i + 2 * j > spec.k:
                continue
            shift = i if spec.variant == "parabolic_tilde" else i + 2 * j
            total += lq_beta_from_values(f.derivative(i, j), f, spec.beta - shift, spec.q,
                                         spec.parabolic)
    return total


def weighted_norm(v, spec: WeightSpec, **kw):
    """Sobolev norm for finite q, Hoelder norm for q = inf.  Returns (value, density)."""
    if math.isinf(spec.q):
        res = holder_norm(v, spec, **kw)
        return res.value, res.radii_per_decade
    return sobolev_norm(v, spec, **{k: kw[k] for k in ("r", "n", "t") if k in kw}), math.nan


@dataclass(frozen=True)
class ScalingCheck:
    lhs: float
    rhs: float
    gap: float


def scaling_identity_check(v_unit, v_scaled, R_scale: float, spec: WeightSpec,
                           kind: str = "lebesgue") -> ScalingCheck:
    """Compare ||v_R|| on the unit annulus with the predicted multiple of ||v|| on A_R.

    ``v_unit`` holds v_R sampled on (r, t) and ``v_scaled`` holds v sampled on
    the matched image (R r, R^2 t) for the plain variant or (R r, t) for the
    tilde variant.  ``kind`` selects the Lebesgue norm (factor R^(beta - 2/q)
    plain, R^beta tilde) or the Hoelder norm (factor R^beta).
    """
    a, b = v_unit, v_scaled
    if not np.allclose(b.r, R_scale * a.r, rtol=1e-13, atol=0):
        raise NormDomainError("scaled field radii do not match R * r")
    tfac = R_scale**2 if spec.variant == "parabolic_plain" else 1.0
    if not np.allclose(b.t, tfac * a.t, rtol=1e-13, atol=1e-300):
        raise NormDomainError("scaled field times do not match")
    if kind == "lebesgue":
        lhs = lq_beta_norm(a, spec)
        norm_b = lq_beta_norm(b, spec)
        if spec.variant == "parabolic_plain" and not math.isinf(spec.q):
            factor = R_scale ** (spec.beta - 2.0 / spec.q)
        elif spec.variant == "elliptic" and not math.isinf(spec.q):
            factor = R_scale**spec.beta
        else:
            factor = R_scale**spec.beta
    elif kind == "holder":
        lhs = holder_norm(a, spec, min_radii_per_decade=0).value
        norm_b = holder_norm(b, spec, min_radii_per_decade=0).value
        factor = R_scale**spec.beta
    else:
        raise NormDomainError(f"unknown kind {kind!r}")
    rhs = factor * norm_b
    scale = max(abs(lhs), abs(rhs))
    return ScalingCheck(lhs, rhs, 0.0 if scale == 0 else abs(lhs - rhs) / scale)


@dataclass(frozen=True)
class ProductCheck:
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12)

    @property
    def slack_ratio(self) -> float:
        if self.lhs == 0:
            return math.inf
        return self.rhs / self.lhs


def holder_product_check(v, beta1: float, beta2: float, p: float, q: float, s: float,
                         parabolic: bool = True, w=None, **kw) -> ProductCheck:
    """||v w||_{L^p_beta} against ||v||_{L^q_beta1} ||w||_{L^s_beta2}, beta = beta1 + beta2.

    ``w`` defaults to ``v``.
    """
    inv = lambda x: 0.0 if math.isinf(x) else 1.0 / x
    if min(p, q, s) < 1:
        raise NormDomainError("exponents must be >= 1")
    if abs(inv(p) - inv(q) - inv(s)) > 1e-14:
        raise NormDomainError("exponents must satisfy 1/p = 1/q + 1/s")
    f = _as_field(v, kw.get("r"), kw.get("n"), kw.get("t"))
    g = f if w is None else _as_field(w, kw.get("r"), kw.get("n"), kw.get("t"))
    if g.values.shape != f.values.shape:
        raise NormDomainError("factors must share one sampling")
    lhs = lq_beta_from_values(f.values * g.values, f, beta1 + beta2, p, parabolic)
    rhs = (lq_beta_from_values(f.values, f, beta1, q, parabolic)
           * lq_beta_from_values(g.values, f, beta2, s, parabolic))
    return ProductCheck(lhs, rhs)


def embedding_ratio(v, beta1: float, beta2: float, p: float, q: float, parabolic=True, **kw):
    """||v||_{L^p_beta1} / ||v||_{L^q_beta2}; monitored, no constant is asserted."""
    f = _as_field(v, kw.get("r"), kw.get("n"), kw.get("t"))
    den = lq_beta_from_values(f.values, f, beta2, q, parabolic)
    num = lq_beta_from_values(f.values, f, beta1, p, parabolic)
    return math.nan if den == 0 else num / den


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    defined: bool
    n_points: int
    message: str = ""


def decay_exponent_fit(v, r, window, floor: float = 1e-14) -> DecayFit:
    """Least-squares slope of log|v| against log r over ``window`` = (lo, hi)."""
    lo, hi = window
    r = np.asarray(r, dtype=float)
    v = np.abs(np.asarray(v, dtype=float))
    m = (r >= lo) & (r <= hi)
    if m.sum() < 3:
        raise NormDomainError(f"window [{lo}, {hi}] holds fewer than 3 radii")
    rr, vv = r[m], v[m]
    keep = vv > floor
    if keep.sum() < 3:
        return DecayFit(math.nan, False, int(keep.sum()),
                        f"|v| below {floor:g} in window; exponent undefined")
    slope = np.polyfit(np.log(rr[keep]), np.log(vv[keep]), 1)[0]
    msg = "" if keep.all() else f"{int((~keep).sum())} sub-floor samples skipped"
    return DecayFit(float(slope), True, int(keep.sum()), msg)


NORM_REPORT_COLUMNS = ("t_u", "t_geom", "variant", "beta", "q", "k", "alpha", "value",
                       "sampling_density", "decay_exp")


def parse_norm_spec(text: str) -> WeightSpec:
    """``variant:beta:q:k[:alpha]``, e.g. ``elliptic:-3:inf:0``."""
    parts = text.split(":")
    if len(parts) not in (4, 5):
        raise NormDomainError(f"norm spec {text!r}: expected variant:beta:q:k[:alpha]")
    try:
        beta, q = float(parts[1]), float(parts[2])
        k = int(parts[3])
        alpha = float(parts[4]) if len(parts) == 5 else 0.5
    except ValueError as exc:
        raise NormDomainError(f"norm spec {text!r}: {exc}") from exc
    return WeightSpec(beta, q, k, alpha, parts[0])


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return ""
    return "inf" if math.isinf(x) else repr(x)


def write_norm_report(rows, path) -> None:
    """rows: tuples (t_u, t_geom, spec, value, density, decay_exp)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(NORM_REPORT_COLUMNS)
        for t_u, t_geom, spec, value, density, decay in rows:
            w.writerow([_fmt(t_u), _fmt(t_geom), spec.variant, _fmt(spec.beta), _fmt(spec.q),
                        spec.k, _fmt(spec.alpha), _fmt(value),
                        "" if density is None else _fmt(density), _fmt(decay)])
