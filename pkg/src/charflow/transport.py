"""Measure-valued solutions of the continuity equation.

``transport_solution`` realizes the push-forward representation: every
atom of the initial measure rides its own characteristic, weights never
change.  The weak-formulation checkers quantify how well a trajectory of
snapshots satisfies the equation against a bank of test functions:

    d/dt <mu_t, phi>  ==  <mu_t, <V_t, grad phi>>.

The residual scheme is central differences against the locally averaged
gradient pairing at interior grid nodes (second order there) and one-sided
differences against the endpoint gradient pairing at the two ends (first
order), so the reported max over a refining grid shrinks linearly, with a
quadratically shrinking interior.  ``renormalization_check`` applies the
same residual to the positive and negative parts of each snapshot; for
transported solutions the parts are transported solutions themselves and
their residuals shrink at the same rate as the full signed solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IntegrationError
from .fields import OsgoodCertificate, VelocityField
from .flowmap import BatchFlowResult, StepController, integrate_flow_batch
from .measures import SignedParticleMeasure, TestFunction, jordan_decompose, pair, pair_gradient
from .moduli import separation_envelope

__all__ = [
    "MeasureTrajectory",
    "ResidualReport",
    "RenormalizationReport",
    "transport_solution",
    "weak_residual",
    "condition_I",
    "renormalization_check",
]


@dataclass(frozen=True)
class MeasureTrajectory:
    """Snapshots of a measure along a strictly increasing time grid.

    ``paths`` (n_atoms, n_times, d) and ``atom_weights`` carry per-atom
    tracking when the trajectory came out of ``transport_solution`` and no
    merging fired; synthetic trajectories may leave them None.
    ``certified_radii`` holds, per time, the largest Osgood envelope of the
    accumulated integration-error estimate among atoms.
    """

    times: np.ndarray
    snapshots: list[SignedParticleMeasure]
    mass_bound: float
    paths: np.ndarray | None = None
    atom_weights: np.ndarray | None = None
    certified_radii: np.ndarray | None = None
    merged: bool = False

    def __post_init__(self):
        t = np.asarray(self.times, float)
        if t.ndim != 1 or len(t) != len(self.snapshots):
            raise DomainError("need one snapshot per time")
        if len(t) >= 2 and np.any(np.diff(t) <= 0):
            raise DomainError("trajectory times must strictly increase")
        if not math.isfinite(self.mass_bound):
            raise DomainError("trajectory mass bound must be finite")

    @staticmethod
    def from_snapshots(times, snapshots) -> "MeasureTrajectory":
        mass = max((s.total_variation for s in snapshots), default=0.0)
        merged = any(s.merged for s in snapshots)
        return MeasureTrajectory(np.asarray(times, float), list(snapshots), mass,
                                 merged=merged)

    @property
    def n_times(self) -> int:
        return len(self.snapshots)


def transport_solution(
    mu0: SignedParticleMeasure,
    field: VelocityField,
    cert: OsgoodCertificate | None,
    times,
    ctrl: StepController | None = None,
) -> MeasureTrajectory:
    """Push mu0 forward along the flow to every requested time.

    Atom weights are carried unchanged (the transported total variation is
    itself a transported solution), so TV is exactly constant unless two
    atoms collide to merging tolerance, which sets the ``merged`` flag.
    """
    t = np.asarray(times, float)
    if t.ndim != 1 or len(t) < 1 or np.any(np.diff(t) <= 0):
        raise DomainError("times must be a strictly increasing 1d grid")
    if t[0] < 0 or t[-1] > field.horizon + 1e-12:
        raise DomainError(f"times must lie inside [0, {field.horizon}]")

    n = mu0.n_atoms
    d = field.dimension
    if n and mu0.dimension != d:
        raise DomainError("measure dimension does not match the field")
    paths = np.empty((n, len(t), d))
    errs = np.zeros(n)
    radii = np.zeros(len(t))
    cur = mu0.positions.reshape(n, d).copy()
    prev_t = 0.0
    for k, tk in enumerate(t):
        if n:
            try:
                leg: BatchFlowResult = integrate_flow_batch(field, cert, prev_t, float(tk), cur, ctrl)
            except IntegrationError as exc:
                raise IntegrationError(
                    f"transport failed on the leg {prev_t:.6g} -> {tk:.6g}: {exc}",
                    partial=exc.partial) from exc
            cur = leg.points
            errs += leg.local_error_estimates
            budget = cert.budget(0.0, float(tk)) if cert is not None else 0.0
            worst = float(np.max(errs)) if n else 0.0
            if cert is not None and cert.modulus is not None and worst < 1.0:
                radii[k] = separation_envelope(cert.modulus, worst, budget).upper
            else:
                radii[k] = 0.0 if worst == 0.0 else math.inf
        paths[:, k, :] = cur
        prev_t = float(tk)

    snapshots = [SignedParticleMeasure(paths[:, k, :], mu0.weights, d) for k in range(len(t))]
    merged = any(s.merged for s in snapshots)
    mass = max((s.total_variation for s in snapshots), default=0.0)
    return MeasureTrajectory(t.copy(), snapshots, mass,
                             paths=paths if not merged else None,
                             atom_weights=mu0.weights.copy() if not merged else None,
                             certified_radii=radii, merged=merged)


# ---------------------------------------------------------------------------
# Weak residuals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    """Per-test-function residuals of the weak formulation on a time grid.

    ``residuals[i, k]`` is the defect of test function i at grid node k;
    ``dt`` is the largest grid spacing.  ``interior_max`` isolates the
    second-order central-difference nodes from the first-order endpoints.
    """

    residuals: np.ndarray  # (n_phi, n_times)
    times: np.ndarray
    dt: float

    @property
    def per_function_max(self) -> np.ndarray:
        return np.max(self.residuals, axis=1)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if self.residuals.size else 0.0

    @property
    def interior_max(self) -> float:
        if self.residuals.shape[1] <= 2:
            return 0.0
        return float(np.max(self.residuals[:, 1:-1]))


def weak_residual(traj: MeasureTrajectory, field: VelocityField,
                  bank: list[TestFunction]) -> ResidualReport:
    """Defect of d/dt <mu_t, phi> against <mu_t, <V_t, grad phi>> per phi.

    Interior nodes: central difference of the pairing over [t_{k-1},
    t_{k+1}] against the trapezoid-weighted average of the gradient
    pairing at the three nodes.  Endpoints: one-sided difference against
    the endpoint gradient pairing.
    """
    if traj.n_times < 2:
        raise DomainError("weak_residual needs at least two times")
    t = traj.times
    m = traj.n_times
    vals = np.empty((len(bank), m))
    grads = np.empty((len(bank), m))
    for i, phi in enumerate(bank):
        for k, mu in enumerate(traj.snapshots):
            vals[i, k] = pair(mu, phi)
            grads[i, k] = pair_gradient(mu, phi, field, float(t[k]))
    res = np.empty_like(vals)
    res[:, 0] = np.abs((vals[:, 1] - vals[:, 0]) / (t[1] - t[0]) - grads[:, 0])
    res[:, -1] = np.abs((vals[:, -1] - vals[:, -2]) / (t[-1] - t[-2]) - grads[:, -1])
    if m > 2:
        span = t[2:] - t[:-2]
        dcent = (vals[:, 2:] - vals[:, :-2]) / span
        gavg = (grads[:, :-2] + 2.0 * grads[:, 1:-1] + grads[:, 2:]) / 4.0
        res[:, 1:-1] = np.abs(dcent - gavg)
    return ResidualReport(res, t.copy(), float(np.max(np.diff(t))))


def condition_I(traj: MeasureTrajectory, field: VelocityField) -> float:
    """Trapezoid-in-time of the integral of |V_t| against |mu_t|.

    Finite by construction for atomic snapshots on a finite grid; this is
    the integrability gate the weak formulation needs to make sense.
    """
    t = traj.times
    vals = np.empty(traj.n_times)
    for k, mu in enumerate(traj.snapshots):
        if mu.n_atoms == 0:
            vals[k] = 0.0
        else:
            speed = np.linalg.norm(field(float(t[k]), mu.positions), axis=-1)
            vals[k] = float(np.sum(np.abs(mu.weights) * speed))
    if traj.n_times < 2:
        return 0.0
    return float(np.trapezoid(vals, t))


@dataclass(frozen=True)
class RenormalizationReport:
    """Weak residuals of the positive and negative parts of a trajectory."""

    plus: ResidualReport
    minus: ResidualReport

    @property
    def max_residual(self) -> float:
        return max(self.plus.max_residual, self.minus.max_residual)


def renormalization_check(traj: MeasureTrajectory, field: VelocityField,
                          bank: list[TestFunction]) -> RenormalizationReport:
    """Apply the weak residual to t -> mu_t^+ and t -> mu_t^- separately.

    A trajectory is renormalized when both parts are themselves solutions;
    transported trajectories are (weights keep their signs), while
    trajectories with mid-run cancellations are not, and their part
    residuals stay bounded away from zero under refinement.
    """
    plus_snaps = []
    minus_snaps = []
    for mu in traj.snapshots:
        p, m = jordan_decompose(mu)
        plus_snaps.append(p)
        minus_snaps.append(m)
    plus = MeasureTrajectory.from_snapshots(traj.times, plus_snaps)
    minus = MeasureTrajectory.from_snapshots(traj.times, minus_snaps)
    return RenormalizationReport(
        weak_residual(plus, field, bank),
        weak_residual(minus, field, bank),
    )
