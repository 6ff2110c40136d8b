"""Characteristic-flow integration with certificate-backed error envelopes.

``integrate_flow`` computes the flow map ``X(s, t, x)`` of a velocity field
by an embedded Dormand-Prince 5(4) pair with PI step control; fields
flagged non-smooth fall back to fixed-step Heun with an embedded Euler
error estimate (adaptive order assumptions do not survive kinks).  Reverse
time is handled by integrating the reversed field, never by special-casing
the stepper.

Each result carries two separate error notions:

  local_error_estimate   accumulated per-step embedded error estimates
                         (a numerical-integration quantity), and
  certified_radius       the Gronwall-Osgood envelope of that estimate
                         under the field's certificate: the radius within
                         which any true characteristic started inside the
                         estimate stays, budget = integral of C over the
                         traversed window.

The batch variants advance many initial points through one shared adaptive
step sequence; everything here is pure, so batches parallelize freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IntegrationError
from .fields import OsgoodCertificate, VelocityField
from .moduli import separation_envelope

__all__ = [
    "StepController",
    "FlowResult",
    "BatchFlowResult",
    "SpaceTimeCurve",
    "CurveConformance",
    "integrate_flow",
    "integrate_flow_batch",
    "semigroup_residual",
    "inverse_residual",
    "curve_conformance",
]


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_DP_E = _DP_B5 - _DP_B4


@dataclass(frozen=True)
class StepController:
    """Adaptive step-control parameters (PI controller on the DP54 pair)."""

    rtol: float = 1e-10
    atol: float = 1e-12
    safety: float = 0.9
    min_factor: float = 0.2
    max_factor: float = 5.0
    max_steps: int = 2_000_000
    fixed_dt: float = 1.0 / 512.0  # step for the non-smooth fallback
    floor_factor: float = 1e-14    # step underflow threshold, relative to T


@dataclass(frozen=True)
class FlowResult:
    """End point of one characteristic with its error bookkeeping."""

    point: np.ndarray
    steps_taken: int
    local_error_estimate: float
    certified_radius: float


@dataclass(frozen=True)
class BatchFlowResult:
    """Flow of a batch of points through a shared adaptive step sequence."""

    points: np.ndarray               # (n, d)
    steps_taken: int
    local_error_estimates: np.ndarray  # (n,)
    certified_radii: np.ndarray        # (n,)

    def single(self, i: int = 0) -> FlowResult:
        return FlowResult(self.points[i], self.steps_taken,
                          float(self.local_error_estimates[i]),
                          float(self.certified_radii[i]))


def _certified_radius(cert: OsgoodCertificate | None, estimate: float, budget: float) -> float:
    if cert is None or cert.modulus is None:
        return math.inf if estimate > 0 else 0.0
    if estimate >= 1.0:
        return 1.0  # beyond the unit scale the modulus gives no control
    return separation_envelope(cert.modulus, float(estimate), budget).upper


def _dp54(f, t0: float, t1: float, y0: np.ndarray, ctrl: StepController, horizon: float):
    """Shared-step adaptive DP54 over a batch y0 (n, d).

    Returns (y, per-point accumulated error, accepted steps).
    """
    n = y0.shape[0]
    y = y0.copy()
    acc = np.zeros(n)
    t = t0
    span = t1 - t0
    h = span / 100.0
    k = np.empty((7,) + y.shape)
    k[6] = f(t, y)  # FSAL slot holds f at the current point
    err_prev = 1.0
    steps = 0
    done = False
    floor = ctrl.floor_factor * max(horizon, abs(span))
    for _ in range(ctrl.max_steps):
        if done:
            return y, acc, steps
        if abs(h) < floor:
            raise IntegrationError(
                f"step underflow at t={t:.6g} (h={h:.3g})",
                partial=(y, acc, steps, t),
            )
        last = (t + 1.01 * h - t1) * math.copysign(1.0, span) >= 0
        if last:
            h = t1 - t
        k[0] = k[6]
        for i in range(1, 7):
            yi = y + h * np.tensordot(_DP_A[i], k[:i], axes=(0, 0))
            k[i] = f(t + _DP_C[i] * h, yi)
        y5 = y + h * np.tensordot(_DP_B5, k, axes=(0, 0))
        e = h * np.tensordot(_DP_E, k, axes=(0, 0))
        scale = ctrl.atol + ctrl.rtol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.max(np.sqrt(np.mean((e / scale) ** 2, axis=-1))))
        if err <= 1.0:
            t = t1 if last else t + h
            done = last
            y = y5
            acc += np.linalg.norm(e, axis=-1)
            steps += 1
            err_prev = max(err, 1e-10)
        else:
            k[6] = k[0]  # keep FSAL value for the retried step
        if err == 0.0:
            fac = ctrl.max_factor
        else:
            fac = ctrl.safety * err ** -0.14 * err_prev ** 0.08
            fac = min(ctrl.max_factor, max(ctrl.min_factor, fac))
        h = h * fac
    raise IntegrationError("step budget exhausted", partial=(y, acc, steps, t))


def _heun_fixed(f, t0: float, t1: float, y0: np.ndarray, dt: float):
    """Fixed-step Heun with embedded Euler error estimate (no rejection)."""
    span = t1 - t0
    nsteps = max(1, int(math.ceil(abs(span) / dt)))
    h = span / nsteps
    y = y0.copy()
    acc = np.zeros(y0.shape[0])
    t = t0
    for i in range(nsteps):
        k1 = f(t, y)
        k2 = f(t + h, y + h * k1)
        y = y + 0.5 * h * (k1 + k2)
        acc += np.linalg.norm(0.5 * h * (k2 - k1), axis=-1)
        t = t0 + (i + 1) * span / nsteps
    return y, acc, nsteps


def integrate_flow_batch(
    field: VelocityField,
    cert: OsgoodCertificate | None,
    s: float,
    t: float,
    points: np.ndarray,
    ctrl: StepController | None = None,
) -> BatchFlowResult:
    """Flow X(s, t, .) applied to every row of ``points``."""
    ctrl = ctrl or StepController()
    points = np.atleast_2d(np.asarray(points, float))
    if points.shape[1] != field.dimension:
        raise DomainError(f"points have dimension {points.shape[1]}, field has {field.dimension}")
    for name, v in (("s", s), ("t", t)):
        if not 0.0 <= v <= field.horizon + 1e-12:
            raise DomainError(f"time {name}={v} outside [0, {field.horizon}]")

    if t == s or points.shape[0] == 0:
        zeros = np.zeros(points.shape[0])
        return BatchFlowResult(points.copy(), 0, zeros, zeros.copy())

    if t >= s:
        def f(tau, y):
            return field(tau, y)
        t0, t1 = s, t
    else:
        # reverse time: integrate the reversed field forward
        def f(u, y):
            return -field(s - u, y)
        t0, t1 = 0.0, s - t

    try:
        if field.smooth:
            y, acc, steps = _dp54(f, t0, t1, points, ctrl, field.horizon)
        else:
            y, acc, steps = _heun_fixed(f, t0, t1, points, ctrl.fixed_dt)
    except IntegrationError as exc:
        y, acc, steps, t_reached = exc.partial
        budget = cert.budget(s, t) if cert is not None else 0.0
        radii = np.array([_certified_radius(cert, e, budget) for e in acc])
        exc.partial = BatchFlowResult(y, steps, acc, radii)
        raise

    budget = cert.budget(s, t) if cert is not None else 0.0
    radii = np.array([_certified_radius(cert, e, budget) for e in acc])
    return BatchFlowResult(y, steps, acc, radii)


def integrate_flow(
    field: VelocityField,
    cert: OsgoodCertificate | None,
    s: float,
    t: float,
    x,
    ctrl: StepController | None = None,
) -> FlowResult:
    """Flow map X(s, t, x) for a single point x."""
    x = np.asarray(x, float).reshape(1, -1)
    try:
        batch = integrate_flow_batch(field, cert, s, t, x, ctrl)
    except IntegrationError as exc:
        if isinstance(exc.partial, BatchFlowResult):
            exc.partial = exc.partial.single(0)
        raise
    res = batch.single(0)
    return FlowResult(res.point.copy(), res.steps_taken, res.local_error_estimate,
                      res.certified_radius)


def semigroup_residual(field, cert, t1: float, t2: float, t3: float, x, ctrl=None) -> float:
    """|X(t3, t2, X(t1, t3, x)) - X(t1, t2, x)|."""
    leg = integrate_flow(field, cert, t1, t3, x, ctrl)
    two = integrate_flow(field, cert, t3, t2, leg.point, ctrl)
    direct = integrate_flow(field, cert, t1, t2, x, ctrl)
    return float(np.linalg.norm(two.point - direct.point))


def inverse_residual(field, cert, s: float, t: float, x, ctrl=None) -> float:
    """|X(t, s, X(s, t, x)) - x|."""
    fwd = integrate_flow(field, cert, s, t, x, ctrl)
    back = integrate_flow(field, cert, t, s, fwd.point, ctrl)
    return float(np.linalg.norm(back.point - np.asarray(x, float)))


# ---------------------------------------------------------------------------
# Reparametrized curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpaceTimeCurve:
    """Discrete Lipschitz curve s -> (t(s), x(s)) on a parameter grid.

    Consecutive increments must respect the declared Lipschitz bound:
    |(dt, dx)| <= lipschitz_bound * ds.  The time coordinate may be
    non-monotone; that is the point of the reparametrized formulation.
    """

    params: np.ndarray      # (m+1,)
    times: np.ndarray       # (m+1,)
    points: np.ndarray      # (m+1, d)
    lipschitz_bound: float

    def __post_init__(self):
        s = np.asarray(self.params, float)
        t = np.asarray(self.times, float)
        x = np.atleast_2d(np.asarray(self.points, float))
        if s.ndim != 1 or len(s) < 2 or np.any(np.diff(s) <= 0):
            raise DomainError("curve parameters must strictly ascend")
        if t.shape != s.shape or x.shape[0] != s.shape[0]:
            raise DomainError("curve arrays must share the parameter grid")
        ds = np.diff(s)
        inc = np.sqrt(np.diff(t) ** 2 + np.sum(np.diff(x, axis=0) ** 2, axis=1))
        if np.any(inc > self.lipschitz_bound * ds * (1 + 1e-9) + 1e-12):
            raise DomainError("curve increments exceed the declared Lipschitz bound")

    @staticmethod
    def from_flow(field, cert, t_grid, x0, ctrl=None) -> "SpaceTimeCurve":
        """Sample a curve from the flow along a (possibly non-monotone) time grid."""
        t_grid = np.asarray(t_grid, float)
        pts = [np.asarray(x0, float)]
        for a, b in zip(t_grid[:-1], t_grid[1:]):
            pts.append(integrate_flow(field, cert, float(a), float(b), pts[-1], ctrl).point)
        pts = np.stack(pts)
        seg = np.sqrt(np.diff(t_grid) ** 2 + np.sum(np.diff(pts, axis=0) ** 2, axis=1))
        s = np.concatenate(([0.0], np.cumsum(np.maximum(seg, 1e-15))))
        lip = float(np.max(seg / np.diff(s))) * (1 + 1e-12) + 1e-12
        return SpaceTimeCurve(s, t_grid.copy(), pts, lip)


@dataclass(frozen=True)
class CurveConformance:
    """Outcome of checking a curve against the flow it claims to follow.

    max_deviation   max_k |x(s_k) - X(t(0), t(s_k), x(0))|
    ode_defect      accumulated discrete residual of dx = dt V(t, x)
    budget          discrete integral of |dt| C(t) along the curve
    envelope_bound  Osgood envelope of the defect under that budget
    """

    max_deviation: float
    ode_defect: float
    budget: float
    envelope_bound: float

    @property
    def within_envelope(self) -> bool:
        return self.max_deviation <= self.envelope_bound + 1e-15


def curve_conformance(curve: SpaceTimeCurve, field, cert, ctrl=None) -> CurveConformance:
    """Check x(s) == X(t(0), t(s), x(0)) along the curve grid.

    The discrete budget sum_k |dt_k| C(t_k) mirrors the integrability
    hypothesis of the reparametrized uniqueness statement; a non-finite
    budget is a precondition violation.
    """
    t = np.asarray(curve.times, float)
    x = np.atleast_2d(np.asarray(curve.points, float))
    dt = np.diff(t)
    budget = float(np.sum(np.abs(dt) * cert.C(t[:-1])))
    if not math.isfinite(budget):
        raise DomainError("curve budget sum |dt| C(t) is not finite")

    # discrete ODE defect (explicit-Euler form, first order in the grid)
    vel = np.stack([field(float(tk), xk) for tk, xk in zip(t[:-1], x[:-1])])
    defect = float(np.sum(np.linalg.norm(np.diff(x, axis=0) - dt[:, None] * vel, axis=1)))

    dev = 0.0
    est = 0.0
    cur = x[0].copy()
    for k in range(1, len(t)):
        res = integrate_flow(field, cert, float(t[k - 1]), float(t[k]), cur, ctrl)
        cur = res.point
        est += res.local_error_estimate
        dev = max(dev, float(np.linalg.norm(x[k] - cur)))

    bound = _certified_radius(cert, defect + est, budget)
    return CurveConformance(dev, defect, budget, bound)
