"""Moduli of continuity and two-sided Gronwall-Osgood separation envelopes.

A modulus of continuity is a continuous non-decreasing function
``rho : [0,1) -> [0,inf)`` with ``rho(0) = 0``; it is extended to
``[1,inf)`` by ``rho = +inf``.  The central object here is the integral

    Phi(a, b) = integral of 1/rho(s) ds over [a, b],   0 < a, b < 1,

whose divergence as ``a -> 0`` (the Osgood property) is what makes the
comparison argument work: a quantity ``d(s)`` obeying the differential
inequality ``|d'(s)| <= c(s) rho(d(s))`` with ``integral c = B`` is pinched
between the two inverse values

    lower = Phi^{-1}_{.., d0}(B)     and     upper = Phi^{-1}_{d0, ..}(B),

and ``d0 = 0`` forces ``d == 0`` exactly when the modulus is Osgood.

Closed forms are used for the two named moduli (linear, log-Lipschitz);
other moduli fall back to adaptive quadrature with geometric subdivision
toward the singular endpoint.  Inversion is by bisection in log space,
which is slow but unconditionally safe on a monotone function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .errors import DomainError

__all__ = [
    "Modulus",
    "Envelope",
    "OsgoodDiagnostic",
    "eval_modulus",
    "osgood_integral",
    "separation_envelope",
    "osgood_diagnostic",
    "parse_modulus",
]

# Quadrature / inversion tolerances (absolute on Phi, relative on inverses).
_QUAD_TOL = 1e-13
_BISECT_LOG_TOL = 1e-13
_DIVERGENCE_CAP = 1e9


@dataclass(frozen=True)
class Modulus:
    """A modulus of continuity, one of four kinds.

    kind        one of ``linear``, ``log_lipschitz``, ``power``, ``tabulated``
    alpha       exponent for ``power`` (must lie in (0,1))
    knots/vals  sample grid for ``tabulated`` (knots ascending in [0,1),
                vals nonneg nondecreasing with vals[0] == 0); evaluation
                interpolates linearly and is pinned to 0 at s = 0.
    """

    kind: str
    alpha: float | None = None
    knots: tuple[float, ...] | None = None
    vals: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "log_lipschitz", "power", "tabulated"):
            raise DomainError(f"unknown modulus kind {self.kind!r}")
        if self.kind == "power":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise DomainError("power modulus needs alpha in (0,1)")
        if self.kind == "tabulated":
            k = np.asarray(self.knots, dtype=float)
            v = np.asarray(self.vals, dtype=float)
            if k.ndim != 1 or k.shape != v.shape or k.size < 2:
                raise DomainError("tabulated modulus needs matching 1d knots/vals")
            if k[0] != 0.0 or k[-1] >= 1.0 or np.any(np.diff(k) <= 0):
                raise DomainError("tabulated knots must ascend from 0 inside [0,1)")
            if v[0] != 0.0:
                raise DomainError("tabulated modulus must vanish at 0")
            if np.any(v < 0) or np.any(np.diff(v) < 0):
                raise DomainError("tabulated values must be nonneg, nondecreasing")

    # -- constructors ----------------------------------------------------

    @staticmethod
    def linear() -> "Modulus":
        return Modulus("linear")

    @staticmethod
    def log_lipschitz() -> "Modulus":
        return Modulus("log_lipschitz")

    @staticmethod
    def power(alpha: float) -> "Modulus":
        return Modulus("power", alpha=alpha)

    @staticmethod
    def tabulated(knots: Sequence[float], vals: Sequence[float]) -> "Modulus":
        knots = tuple(float(k) for k in knots)
        vals = tuple(float(v) for v in vals)
        if knots[0] > 0.0:
            knots = (0.0,) + knots
            vals = (0.0,) + vals
        return Modulus("tabulated", knots=knots, vals=vals)

    # -- evaluation ------------------------------------------------------

    def __call__(self, s):
        """Evaluate rho(s); accepts scalars or arrays, returns +inf for s >= 1."""
        arr = np.asarray(s, dtype=float)
        if np.any(arr < 0):
            raise DomainError("modulus evaluated at negative argument")
        out = np.empty_like(arr)
        big = arr >= 1.0
        out[big] = math.inf
        sm = ~big
        v = arr[sm]
        if self.kind == "linear":
            out[sm] = v
        elif self.kind == "log_lipschitz":
            with np.errstate(divide="ignore", invalid="ignore"):
                out[sm] = np.where(v > 0, v * (1.0 - np.log(np.maximum(v, 1e-323))), 0.0)
        elif self.kind == "power":
            out[sm] = v**self.alpha
        else:
            out[sm] = np.interp(v, self.knots, self.vals)
        if arr.ndim == 0:
            return float(out)
        return out

    @property
    def is_osgood(self) -> bool:
        """Whether the 1/rho integral diverges at 0.

        Exact for the named kinds; for tabulated moduli the head of the
        table decides (linear interpolation from (0,0) makes any table
        with a positive first slope Osgood).
        """
        if self.kind in ("linear", "log_lipschitz"):
            return True
        if self.kind == "power":
            return False
        # tabulated: interpolation from (0,0) is linear near 0, hence
        # Osgood, unless the table jumps to a positive value at knot 0.
        return self.vals[0] == 0.0

    def describe(self) -> str:
        if self.kind == "power":
            return f"power:{self.alpha:g}"
        if self.kind == "tabulated":
            return f"tabulated[{len(self.knots)}]"
        return {"linear": "linear", "log_lipschitz": "loglip"}[self.kind]


def parse_modulus(spec: str) -> Modulus:
    """Parse a CLI modulus spec: ``linear``, ``loglip``, ``power:0.5``."""
    spec = spec.strip()
    if spec == "linear":
        return Modulus.linear()
    if spec in ("loglip", "log_lipschitz"):
        return Modulus.log_lipschitz()
    if spec.startswith("power:"):
        return Modulus.power(float(spec.split(":", 1)[1]))
    raise DomainError(f"cannot parse modulus spec {spec!r}")


def eval_modulus(m: Modulus, s) :
    """Functional form of ``m(s)`` (kept for symmetry with the other ops)."""
    return m(s)


# ---------------------------------------------------------------------------
# The Osgood integral Phi
# ---------------------------------------------------------------------------

def _phi_closed(m: Modulus, a: float, b: float) -> float | None:
    """Closed form of Phi(a,b) for the two named moduli, else None."""
    if m.kind == "linear":
        return math.log(b / a)
    if m.kind == "log_lipschitz":
        return math.log((1.0 - math.log(a)) / (1.0 - math.log(b)))
    return None


def _phi_quad(m: Modulus, a: float, b: float) -> float:
    """Quadrature of 1/rho over [a,b], 0 <= a < b <= 1.

    Geometric subdivision from the lower endpoint keeps the adaptive rule
    honest near the singularity; a == 0 is allowed for moduli with an
    integrable head (the first panel is handed to quadpack whole).
    """

    def f(s):
        r = m(s)
        return 1.0 / r if r > 0 else math.inf

    total = 0.0
    lo = a
    if lo == 0.0:
        lo = min(b / 4.0, 1e-4)
        val, _ = quad(f, 0.0, lo, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL, limit=400)
        total += val
    while lo < b:
        hi = min(4.0 * lo, b)
        val, _ = quad(f, lo, hi, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL, limit=200)
        total += val
        lo = hi
    return total


def _phi(m: Modulus, a: float, b: float) -> float:
    """Phi(a,b), antisymmetric, for 0 < a,b <= 1 (b = 1 means the limit b->1-)."""
    if a == b:
        return 0.0
    if a > b:
        return -_phi(m, b, a)
    closed = _phi_closed(m, a, b)
    if closed is not None:
        return closed
    return _phi_quad(m, a, b)


def osgood_integral(m: Modulus, a: float, b: float) -> float:
    """Phi(a,b) = integral of 1/rho over [a,b] for a,b in the open unit interval."""
    for name, v in (("a", a), ("b", b)):
        if not 0.0 < v < 1.0:
            raise DomainError(f"osgood_integral: {name}={v!r} outside (0,1)")
    return _phi(m, a, b)


def _phi_from_zero(m: Modulus, b: float) -> float:
    """lim_{a->0} Phi(a,b); finite only for non-Osgood moduli."""
    if m.is_osgood:
        return math.inf
    return _phi_quad(m, 0.0, b)


# ---------------------------------------------------------------------------
# Separation envelopes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Envelope:
    """Two-sided Gronwall-Osgood envelope of a separation.

    ``upper`` solves Phi(d0, upper) = budget (1.0 when the budget walks the
    separation past the unit scale, where rho = +inf gives no control);
    ``lower`` solves Phi(lower, d0) = budget (0.0 when no positive solution
    exists, which for Osgood moduli happens only through float underflow).
    """

    d0: float
    budget: float
    lower: float
    upper: float


def _bisect_log(fn, lo: float, hi: float) -> float:
    """Bisect increasing fn to its root in [lo, hi]; iterates in log space."""
    tlo, thi = math.log(lo), math.log(hi)
    for _ in range(200):
        if thi - tlo <= _BISECT_LOG_TOL:
            break
        tm = 0.5 * (tlo + thi)
        if fn(math.exp(tm)) < 0.0:
            tlo = tm
        else:
            thi = tm
    return math.exp(0.5 * (tlo + thi))


def separation_envelope(m: Modulus, d0: float, budget: float) -> Envelope:
    """Envelope of separations started at ``d0`` under modulus budget ``budget``.

    ``budget`` is the dimensionless integral of the rate factor multiplying
    rho in the differential inequality (the integral of |t'| C(t) along the
    comparison interval).
    """
    if d0 < 0:
        raise DomainError("separation_envelope: d0 must be nonnegative")
    if d0 >= 1.0:
        raise DomainError("separation_envelope: d0 must lie in [0,1)")
    if budget < 0:
        raise DomainError("separation_envelope: budget must be nonnegative")

    if budget == 0.0 or (d0 == 0.0 and m.is_osgood):
        return Envelope(d0, budget, d0, d0)

    if d0 == 0.0:
        # non-Osgood: positive separations can emerge from zero
        cap = _phi_from_zero(m, 1.0)
        if budget >= cap:
            upper = 1.0
        else:
            upper = _bisect_log(lambda u: _phi_quad(m, 0.0, u) - budget, 1e-300, 1.0)
        return Envelope(d0, budget, 0.0, upper)

    # upper bound: Phi(d0, u) = budget, u in (d0, 1]
    cap_up = _phi(m, d0, 1.0)
    if budget >= cap_up:
        upper = 1.0
    else:
        upper = _bisect_log(lambda u: _phi(m, d0, u) - budget, d0, 1.0)

    # lower bound: Phi(l, d0) = budget, bracket by repeated squaring
    lo = d0 * d0 if d0 < 1.0 else 0.5
    hi = d0
    lower = None
    while True:
        if lo < 1e-300:
            lower = 0.0  # non-Osgood tail or float underflow
            break
        if _phi(m, lo, d0) >= budget:
            break
        hi = lo
        lo = lo * lo
    if lower is None:
        lower = _bisect_log(lambda u: budget - _phi(m, u, d0), lo, hi)
    return Envelope(d0, budget, lower, upper)


# ---------------------------------------------------------------------------
# Divergence diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OsgoodDiagnostic:
    """Report of Phi(eps, 1/2) along a grid of shrinking eps.

    The verdict is a heuristic read off the increment ratios of the Phi
    sequence on a (roughly geometric) grid; it refutes or suggests, it
    never certifies.  Verdicts: ``diverging``, ``bounded``, ``inconclusive``.
    """

    eps: tuple[float, ...]
    phi: tuple[float, ...]
    verdict: str


def osgood_diagnostic(m: Modulus, eps_grid: Sequence[float]) -> OsgoodDiagnostic:
    eps = [float(e) for e in eps_grid]
    if not eps:
        raise DomainError("osgood_diagnostic: empty grid")
    if any(e <= 0 for e in eps) or any(b <= a for a, b in zip(eps[1:], eps[:-1])):
        raise DomainError("osgood_diagnostic: grid must be positive and decreasing")
    phi = [_phi(m, e, 0.5) for e in eps]

    if len(phi) < 3:
        verdict = "inconclusive"
    else:
        inc = np.diff(phi)
        if np.any(inc <= 0):
            verdict = "bounded"
        else:
            ratios = inc[1:] / inc[:-1]
            growing = len(ratios) >= 2 and bool(np.all(np.diff(ratios) > 0.02))
            if np.max(ratios) >= 0.85 or growing:
                verdict = "diverging"
            else:
                verdict = "bounded"
    return OsgoodDiagnostic(tuple(eps), tuple(phi), verdict)
