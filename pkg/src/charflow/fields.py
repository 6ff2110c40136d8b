"""Velocity fields, their certificates, and empirical condition checkers.

A velocity field is an evaluator ``V(t, x)`` on ``[0, T] x R^d`` together
with a dimension and horizon.  A certificate declares the data under which
the uniqueness machinery applies: a modulus of continuity ``rho`` and two
integrable rate profiles ``C(t)`` (one-sided oscillation control) and
``D(t)`` (speed bound),

    |<V(t,x) - V(t,y), x - y>| <= C(t) |x-y| rho(|x-y|),
    |V(t,x)| <= D(t).

The checkers sample these inequalities; they refute, they never certify.
Profiles are piecewise constant so their time integrals are exact.

Built-ins: a planar rotation, a constant translation, a radial field with
log-Lipschitz speed profile (clamped to the identity outside the unit
ball), and a one-dimensional sign field for regularized-discontinuity
demonstrations.  The sign field carries no oscillation certificate: no
modulus can control a jump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError
from .moduli import Modulus

__all__ = [
    "PiecewiseConstantProfile",
    "VelocityField",
    "OsgoodCertificate",
    "ViolationReport",
    "PairSampler",
    "BallStencil",
    "ball_stencil",
    "check_osgood",
    "check_bound",
    "mollify",
    "builtin_field",
    "load_field_grid",
    "parse_field",
    "eval_field_batch",
]


# ---------------------------------------------------------------------------
# Profiles and certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PiecewiseConstantProfile:
    """Nonnegative piecewise-constant function of time with exact integrals.

    ``knots`` ascend from 0 to the horizon; ``values[i]`` holds on
    ``[knots[i], knots[i+1])``.  Evaluation clamps outside the knot span.
    """

    knots: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        k = np.asarray(self.knots, float)
        v = np.asarray(self.values, float)
        if k.ndim != 1 or k.size < 2 or np.any(np.diff(k) <= 0):
            raise DomainError("profile knots must strictly ascend")
        if v.shape != (k.size - 1,):
            raise DomainError("profile needs one value per knot interval")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DomainError("profile values must be finite and nonnegative")

    @staticmethod
    def constant(value: float, horizon: float) -> "PiecewiseConstantProfile":
        return PiecewiseConstantProfile((0.0, float(horizon)), (float(value),))

    def __call__(self, t):
        k = np.asarray(self.knots)
        idx = np.clip(np.searchsorted(k, np.asarray(t, float), side="right") - 1, 0, len(self.values) - 1)
        out = np.asarray(self.values)[idx]
        return float(out) if np.ndim(t) == 0 else out

    def integral(self, a: float, b: float) -> float:
        """Exact integral over [a, b] (a <= b), constant-extended outside the knots."""
        if b < a:
            raise DomainError("profile integral needs a <= b")
        k = np.asarray(self.knots, float)
        v = np.asarray(self.values, float)
        edges = np.concatenate(([min(a, k[0])], k, [max(b, k[-1])]))
        vals = np.concatenate(([v[0]], v, [v[-1]]))
        lo = np.clip(edges[:-1], a, b)
        hi = np.clip(edges[1:], a, b)
        return float(np.sum(vals * np.maximum(hi - lo, 0.0)))


@dataclass(frozen=True)
class VelocityField:
    """Evaluable velocity field on [0, horizon] x R^dimension.

    The evaluator must be total (finite output) and vectorized over leading
    axes of ``x``; ``t`` may arrive as a scalar or a matching 1d array.
    ``smooth=False`` routes integration to the fixed-step fallback.
    ``domain_radius`` bounds the region the default samplers draw from
    (certificates of the built-ins are declared on that region).
    """

    dimension: int
    horizon: float
    evaluator: Callable
    name: str = "custom"
    smooth: bool = True
    domain_radius: float = 1.0

    def __call__(self, t, x):
        return np.asarray(self.evaluator(t, np.asarray(x, float)), float)


def eval_field_batch(field: VelocityField, t, x: np.ndarray) -> np.ndarray:
    """Evaluate a field on rows of ``x`` with per-row times ``t``.

    Tries the vectorized path first; falls back to a row loop for
    evaluators that only take scalar times.
    """
    x = np.asarray(x, float)
    try:
        out = np.asarray(field.evaluator(t, x), float)
        if out.shape == x.shape:
            return out
    except Exception:
        pass
    t_arr = np.broadcast_to(np.asarray(t, float), x.shape[:-1])
    out = np.empty_like(x)
    for i in np.ndindex(x.shape[:-1]):
        out[i] = field.evaluator(float(t_arr[i]), x[i])
    return out


@dataclass(frozen=True)
class OsgoodCertificate:
    """Declared (modulus, C, D) data for a field.

    ``modulus=None`` means no oscillation certificate is claimed (only the
    speed bound D applies); oscillation checks then refuse to run.
    """

    modulus: Modulus | None
    C: PiecewiseConstantProfile
    D: PiecewiseConstantProfile

    def budget(self, a: float, b: float) -> float:
        """Integral of C over the time window spanned by a and b."""
        lo, hi = (a, b) if a <= b else (b, a)
        return self.C.integral(lo, hi)


@dataclass(frozen=True)
class ViolationReport:
    """Worst sampled ratio of an inequality check.

    ``worst_ratio <= 1`` means no violation was found among the samples;
    the witness is the sample attaining the worst ratio.  Pairs whose
    points coincide are skipped and counted in ``skipped``.
    """

    worst_ratio: float
    witness: tuple | None
    samples_checked: int
    skipped: int = 0


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairSampler:
    """Seeded generator of sample triples (t, x, y) inside a ball.

    Points are uniform in the ball ``|x - center| <= radius``; the partner
    point sits at a log-uniform separation in ``(sep_lo, sep_hi)`` along a
    uniform direction, resampled (deterministically) until it falls back
    inside the ball.  ``pairs(n)`` is a pure function of ``(seed, n)``.
    """

    seed: int
    dim: int
    horizon: float
    radius: float = 1.0
    center: tuple[float, ...] | None = None
    sep_lo: float = 1e-6
    sep_hi: float = 0.999

    def pairs(self, n: int):
        if n < 1:
            raise DomainError("sampler needs n >= 1")
        rng = np.random.default_rng(self.seed)
        center = np.zeros(self.dim) if self.center is None else np.asarray(self.center, float)
        t = rng.uniform(0.0, self.horizon, n)
        xs = np.empty((n, self.dim))
        ys = np.empty((n, self.dim))
        filled = 0
        rounds = 0
        while filled < n:
            rounds += 1
            if rounds > 10000:
                raise DomainError("pair sampler cannot satisfy its constraints")
            m = 2 * (n - filled) + 16
            x = rng.normal(size=(m, self.dim))
            x /= np.linalg.norm(x, axis=1, keepdims=True)
            x *= rng.uniform(0.0, 1.0, (m, 1)) ** (1.0 / self.dim) * self.radius
            x += center
            d = rng.normal(size=(m, self.dim))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            sep = np.exp(rng.uniform(math.log(self.sep_lo), math.log(self.sep_hi), m))
            y = x + d * sep[:, None]
            ok = np.linalg.norm(y - center, axis=1) <= self.radius
            k = min(int(ok.sum()), n - filled)
            xs[filled : filled + k] = x[ok][:k]
            ys[filled : filled + k] = y[ok][:k]
            filled += k
        return t, xs, ys


# ---------------------------------------------------------------------------
# Checkers
# ---------------------------------------------------------------------------

def _finish_report(ratios: np.ndarray, keep: np.ndarray, t, x, y, skipped: int) -> ViolationReport:
    if ratios.size == 0:
        return ViolationReport(0.0, None, 0, skipped)
    i = int(np.argmax(ratios))
    witness = (float(t[keep][i]), tuple(x[keep][i]), tuple(y[keep][i]))
    return ViolationReport(float(ratios[i]), witness, int(ratios.size), skipped)


def check_osgood(field: VelocityField, cert: OsgoodCertificate, sampler, n: int) -> ViolationReport:
    """Sample the one-sided oscillation inequality; report the worst ratio.

    Ratio per sample: |<V(t,x)-V(t,y), x-y>| / (C(t) |x-y| rho(|x-y|)),
    with 0/0 read as 0 and positive/0 as +inf.  Separations at or beyond
    the unit scale have rho = +inf and never violate.
    """
    if n < 1:
        raise DomainError("check_osgood needs n >= 1")
    if cert.modulus is None:
        raise DomainError("certificate declares no modulus; nothing to check")
    t, x, y = sampler.pairs(n)
    sep = np.linalg.norm(x - y, axis=-1)
    keep = sep > 0.0
    skipped = int(np.sum(~keep))
    t_k, x_k, y_k = t[keep], x[keep], y[keep]
    dv = eval_field_batch(field, t_k, x_k) - eval_field_batch(field, t_k, y_k)
    num = np.abs(np.sum(dv * (x_k - y_k), axis=-1))
    sep_k = sep[keep]
    denom = cert.C(t_k) * sep_k * cert.modulus(sep_k)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(num == 0.0, 0.0, num / denom)
    return _finish_report(ratios, keep, t, x, y, skipped)


def check_bound(field: VelocityField, cert: OsgoodCertificate, sampler, n: int) -> ViolationReport:
    """Sample the speed bound |V(t,x)| <= D(t); report the worst ratio."""
    if n < 1:
        raise DomainError("check_bound needs n >= 1")
    t, x, y = sampler.pairs(n)
    speed = np.linalg.norm(eval_field_batch(field, t, x), axis=-1)
    dbound = cert.D(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(speed == 0.0, 0.0, np.where(dbound > 0, speed / dbound, math.inf))
    keep = np.ones(len(t), bool)
    return _finish_report(ratios, keep, t, x, y, 0)


# ---------------------------------------------------------------------------
# Mollification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BallStencil:
    """Fixed quadrature stencil on the unit ball: offsets (k,d), weights sum to 1.

    Offsets come in antipodal pairs, so first moments vanish and linear
    fields are averaged exactly.
    """

    offsets: np.ndarray
    weights: np.ndarray


def ball_stencil(dim: int, n_radial: int = 6, n_angular: int = 16, seed: int = 20) -> BallStencil:
    """Symmetric ball-average stencil.

    d=1: Gauss-Legendre on [-1,1].  d=2: Gauss-Legendre in radius (weighted
    by the area element) times equispaced angles.  d>=3: radial rule times
    a fixed antipodally-symmetrized direction set.
    """
    if dim == 1:
        nodes, w = np.polynomial.legendre.leggauss(2 * n_radial)
        return BallStencil(nodes[:, None], w / 2.0)
    r, wr = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * (r + 1.0)
    wr = 0.5 * wr * dim * r ** (dim - 1)  # |ball| normalized radial density
    wr /= wr.sum()
    if dim == 2:
        ang = 2 * math.pi * np.arange(n_angular) / n_angular
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        rng = np.random.default_rng(seed)
        half = rng.normal(size=(max(n_angular // 2, dim + 1), dim))
        half /= np.linalg.norm(half, axis=1, keepdims=True)
        dirs = np.concatenate([half, -half], axis=0)
    wd = np.full(len(dirs), 1.0 / len(dirs))
    offsets = (r[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    weights = (wr[:, None] * wd[None, :]).reshape(-1)
    return BallStencil(offsets, weights)


def mollify(field: VelocityField, radius: float, stencil: BallStencil | None = None) -> VelocityField:
    """Ball-average regularization of a field by a fixed stencil.

    The averaged field approximates the midpoint selection from the
    convexified multivalued regularization of a discontinuous field;
    constants are reproduced exactly and linear fields exactly by the
    antipodal symmetry of the stencil.  Averaging preserves the
    oscillation certificate data up to the modulus slack rho(. + 2r).
    """
    if radius <= 0:
        raise DomainError("mollify needs radius > 0")
    st = stencil if stencil is not None else ball_stencil(field.dimension)
    offsets = np.asarray(st.offsets, float) * radius
    weights = np.asarray(st.weights, float)

    def averaged(t, x):
        x = np.asarray(x, float)
        pts = x[..., None, :] + offsets  # (..., k, d)
        flat = pts.reshape(-1, field.dimension)
        t_flat = np.repeat(np.broadcast_to(np.asarray(t, float), x.shape[:-1]).reshape(-1), len(offsets))
        vals = eval_field_batch(field, t_flat, flat).reshape(pts.shape)
        return np.sum(vals * weights[:, None], axis=-2)

    return replace(field, evaluator=averaged, name=f"mollified({field.name},r={radius:g})")


# ---------------------------------------------------------------------------
# Built-in fields
# ---------------------------------------------------------------------------

def _loglip_speed(s):
    s = np.asarray(s, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = s * (1.0 - np.log(np.maximum(s, 1e-323)))
    return np.where(s >= 1.0, s, np.where(s > 0, inside, 0.0))


def builtin_field(name: str, **params):
    """Named example field with its shipped certificate.

    rotation            d=2, V(x,y) = (-y, x); oscillation vanishes
    constant            V == v0 (params: velocity)
    radial_loglip       V(x) = unit(x) * g(|x|), g(s) = s(1 - ln s) on [0,1),
                        g(s) = s beyond; C == 2 certifies the log-Lipschitz
                        modulus globally (worst pair ratio is (1+ln 2)/2)
    sign                d=1, V = sign(x) * amplitude; no modulus certificate
    """
    horizon = float(params.pop("horizon", None) or {"rotation": 2 * math.pi}.get(name, 1.0))

    if name == "rotation":
        def rot(t, x):
            return np.stack([-x[..., 1], x[..., 0]], axis=-1)
        field = VelocityField(2, horizon, rot, "rotation")
        cert = OsgoodCertificate(
            Modulus.linear(),
            PiecewiseConstantProfile.constant(1.0, horizon),
            PiecewiseConstantProfile.constant(1.0, horizon),
        )
    elif name == "constant":
        v0 = np.asarray(params.pop("velocity", (1.0, 0.0)), float)
        def const(t, x):
            return np.broadcast_to(v0, x.shape).copy()
        field = VelocityField(len(v0), horizon, const, "constant")
        cert = OsgoodCertificate(
            Modulus.linear(),
            PiecewiseConstantProfile.constant(1.0, horizon),
            PiecewiseConstantProfile.constant(float(np.linalg.norm(v0)), horizon),
        )
    elif name == "radial_loglip":
        dim = int(params.pop("dim", 1))
        def radial(t, x):
            r = np.linalg.norm(x, axis=-1, keepdims=True)
            with np.errstate(invalid="ignore"):
                unit = np.where(r > 0, x / np.maximum(r, 1e-323), 0.0)
            return unit * _loglip_speed(r)
        field = VelocityField(dim, horizon, radial, "radial_loglip")
        cert = OsgoodCertificate(
            Modulus.log_lipschitz(),
            PiecewiseConstantProfile.constant(2.0, horizon),
            PiecewiseConstantProfile.constant(1.0, horizon),
        )
    elif name == "sign":
        amp = float(params.pop("amplitude", 1.0))
        def sgn(t, x):
            return amp * np.sign(x)
        field = VelocityField(1, horizon, sgn, "sign", smooth=False)
        cert = OsgoodCertificate(
            None,
            PiecewiseConstantProfile.constant(0.0, horizon),
            PiecewiseConstantProfile.constant(abs(amp), horizon),
        )
    else:
        raise DomainError(f"unknown built-in field {name!r}")
    if params:
        raise DomainError(f"unused parameters for field {name!r}: {sorted(params)}")
    return field, cert


def parse_field(spec: str, horizon: float | None = None):
    """CLI field spec: ``rotation``, ``constant:1,0``, ``radial_loglip:2``,
    ``sign``, ``sign:-1``, ``grid:PATH``."""
    head, _, tail = spec.partition(":")
    kw = {}
    if horizon is not None:
        kw["horizon"] = horizon
    if head == "grid":
        field = load_field_grid(tail)
        return field, None
    if head == "constant" and tail:
        kw["velocity"] = tuple(float(v) for v in tail.split(","))
    elif head == "radial_loglip" and tail:
        kw["dim"] = int(tail)
    elif head == "sign" and tail:
        kw["amplitude"] = float(tail)
    elif tail:
        raise DomainError(f"field {head!r} takes no parameter {tail!r}")
    return builtin_field(head, **kw)


# ---------------------------------------------------------------------------
# Tabulated fields
# ---------------------------------------------------------------------------

def load_field_grid(path: str) -> VelocityField:
    """Load a velocity field from a tabulated grid file.

    Format (whitespace-separated; '#' comments):

        d 2
        T 1.0
        axis t 0.0 1.0 5
        axis x0 -1.0 1.0 9
        axis x1 -1.0 1.0 9
        values
        <one row of d numbers per grid point, t-major C order>

    Evaluation interpolates multilinearly and clamps coordinates to the
    grid box, so the evaluator is total (finite everywhere).
    """
    dim = None
    horizon = None
    axes: list[np.ndarray] = []
    rows: list[list[float]] = []
    in_values = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if in_values:
                rows.append([float(v) for v in line.split()])
                continue
            tok = line.split()
            if tok[0] == "d":
                dim = int(tok[1])
            elif tok[0] == "T":
                horizon = float(tok[1])
            elif tok[0] == "axis":
                lo, hi, npts = float(tok[2]), float(tok[3]), int(tok[4])
                if npts < 2 or hi <= lo:
                    raise DomainError(f"{path}:{lineno}: bad axis spec")
                axes.append(np.linspace(lo, hi, npts))
            elif tok[0] == "values":
                in_values = True
            else:
                raise DomainError(f"{path}:{lineno}: unknown directive {tok[0]!r}")
    if dim is None or horizon is None or len(axes) != dim + 1:
        raise DomainError(f"{path}: header must declare d, T and d+1 axes")
    data = np.asarray(rows, float)
    expected = int(np.prod([len(a) for a in axes]))
    if data.shape != (expected, dim):
        raise DomainError(
            f"{path}: expected {expected} rows of {dim} values, got {data.shape}"
        )
    grid_vals = data.reshape(tuple(len(a) for a in axes) + (dim,))
    interp = RegularGridInterpolator(tuple(axes), grid_vals, method="linear",
                                     bounds_error=False, fill_value=None)
    los = np.array([a[0] for a in axes])
    his = np.array([a[-1] for a in axes])

    def tab(t, x):
        x = np.asarray(x, float)
        t_arr = np.broadcast_to(np.asarray(t, float), x.shape[:-1])[..., None]
        pts = np.concatenate([t_arr, x], axis=-1)
        pts = np.clip(pts, los, his)
        return interp(pts)

    return VelocityField(dim, horizon, tab, f"grid:{path}")
