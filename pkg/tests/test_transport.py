"""Continuity-equation transport, weak residuals, renormalization."""

import math

import numpy as np
import pytest

from charflow.errors import DomainError
from charflow.fields import builtin_field
from charflow.measures import SignedParticleMeasure, TestFunction, bump_bank
from charflow.transport import (
    MeasureTrajectory,
    condition_I,
    renormalization_check,
    transport_solution,
    weak_residual,
)

D = SignedParticleMeasure.dirac


@pytest.fixture(scope="module")
def rotation():
    return builtin_field("rotation")


class TestTransportSolution:
    def test_rotation_half_turn(self, rotation):
        field, cert = rotation
        traj = transport_solution(D([1.0, 0.0]), field, cert, [math.pi])
        assert np.linalg.norm(traj.snapshots[-1].positions[0] - [-1.0, 0.0]) < 1e-7

    def test_zero_measure(self, rotation):
        field, cert = rotation
        traj = transport_solution(SignedParticleMeasure.empty(2), field, cert, [0.5, 1.0])
        assert all(s.n_atoms == 0 for s in traj.snapshots)
        assert traj.mass_bound == 0.0

    def test_signed_pair_under_translation(self):
        field, cert = builtin_field("constant", velocity=(0.5, 0.0), horizon=2.0)
        mu0 = D([0.0, 0.0], 1.0) + D([1.0, 1.0], -1.0)
        traj = transport_solution(mu0, field, cert, [2.0])
        out = traj.snapshots[-1]
        assert np.allclose(out.positions, [[1.0, 0.0], [2.0, 1.0]], atol=1e-10)
        assert np.array_equal(out.weights, [1.0, -1.0])

    def test_tv_exactly_conserved_merge_free(self, rotation):
        field, cert = rotation
        rng = np.random.default_rng(0)
        mu0 = SignedParticleMeasure(rng.uniform(-0.7, 0.7, (10, 2)), rng.normal(size=10))
        traj = transport_solution(mu0, field, cert, np.linspace(0.2, 2.0, 7))
        assert not traj.merged
        for snap in traj.snapshots:
            assert snap.total_variation == mu0.total_variation  # exact float equality

    def test_initial_time_zero_is_exact(self, rotation):
        field, cert = rotation
        mu0 = D([0.3, -0.4], 2.0)
        traj = transport_solution(mu0, field, cert, [0.0, 1.0])
        assert np.array_equal(traj.snapshots[0].positions, mu0.positions)

    def test_certified_radii_monotone(self, rotation):
        field, cert = rotation
        traj = transport_solution(D([1.0, 0.0]), field, cert, np.linspace(0.5, 2.0, 4))
        radii = traj.certified_radii
        assert np.all(np.diff(radii) >= -1e-18)
        assert radii[-1] > 0.0

    def test_times_validation(self, rotation):
        field, cert = rotation
        with pytest.raises(DomainError):
            transport_solution(D([1.0, 0.0]), field, cert, [0.5, 0.5])
        with pytest.raises(DomainError):
            transport_solution(D([1.0, 0.0]), field, cert, [-0.1])


class TestWeakResidual:
    def test_constant_trajectory_zero_field(self):
        field, cert = builtin_field("constant", velocity=(0.0, 0.0))
        mu = D([0.1, 0.2], 1.5)
        traj = MeasureTrajectory.from_snapshots(np.linspace(0, 1, 9), [mu] * 9)
        rep = weak_residual(traj, field, bump_bank(2, 4, seed=1))
        assert rep.max_residual == 0.0

    def test_transported_interior_second_order(self, rotation):
        field, cert = rotation
        rng = np.random.default_rng(2)
        mu0 = SignedParticleMeasure(rng.uniform(-0.6, 0.6, (6, 2)), rng.normal(size=6))
        bank = bump_bank(2, 6, seed=3)
        interior = []
        for m in (24, 48, 96):
            traj = transport_solution(mu0, field, cert, np.linspace(0.0, 1.0, m + 1))
            interior.append(weak_residual(traj, field, bank).interior_max)
        # halving dt divides the interior residual by ~4
        assert interior[0] / interior[1] > 3.0
        assert interior[1] / interior[2] > 3.0

    def test_endpoints_first_order(self, rotation):
        field, cert = rotation
        mu0 = D([0.5, 0.0], 1.0)
        bank = [TestFunction((0.45, 0.1), 0.5)]
        maxes = []
        for m in (32, 64, 128):
            traj = transport_solution(mu0, field, cert, np.linspace(0.0, 1.0, m + 1))
            maxes.append(weak_residual(traj, field, bank).max_residual)
        r1 = maxes[0] / maxes[1]
        r2 = maxes[1] / maxes[2]
        assert 1.6 < r1 < 2.6
        assert 1.6 < r2 < 2.6

    def test_frozen_atoms_negative_control(self, rotation):
        # atoms that do not move under a nonzero field violate the equation:
        # the residual stays bounded away from zero as dt shrinks
        field, cert = rotation
        mu = D([0.5, 0.0], 1.0)
        bank = [TestFunction((0.3, 0.2), 0.6)]  # atom off-center: gradient pairing is nonzero
        floors = []
        for m in (16, 64, 256):
            times = np.linspace(0.0, 1.0, m + 1)
            traj = MeasureTrajectory.from_snapshots(times, [mu] * (m + 1))
            floors.append(weak_residual(traj, field, bank).max_residual)
        assert min(floors) > 0.1

    def test_needs_two_times(self, rotation):
        field, _ = rotation
        traj = MeasureTrajectory.from_snapshots([0.0], [D([1.0, 0.0])])
        with pytest.raises(DomainError):
            weak_residual(traj, field, bump_bank(2, 1))


class TestConditionI:
    def test_zero_field(self):
        field, _ = builtin_field("constant", velocity=(0.0,))
        traj = MeasureTrajectory.from_snapshots([0.0, 2.0], [D([0.0])] * 2)
        assert condition_I(traj, field) == 0.0

    def test_unit_speed_stationary_atom(self):
        field, _ = builtin_field("constant", velocity=(1.0,), horizon=2.0)
        traj = MeasureTrajectory.from_snapshots(np.linspace(0, 2, 5), [D([0.0])] * 5)
        assert condition_I(traj, field) == pytest.approx(2.0, rel=1e-14)

    def test_mass_times_speed_times_time(self):
        field, _ = builtin_field("constant", velocity=(2.0, 0.0), horizon=1.0)
        traj = MeasureTrajectory.from_snapshots(np.linspace(0, 1, 3), [D([0.0, 0.0], 3.0)] * 3)
        assert condition_I(traj, field) == pytest.approx(6.0, rel=1e-14)


class TestRenormalization:
    def test_transported_signed_parts_converge_like_full(self, rotation):
        field, cert = rotation
        mu0 = D([0.5, 0.0], 1.0) + D([-0.3, 0.2], -1.0)
        bank = bump_bank(2, 5, seed=4)
        fulls, parts = [], []
        for m in (32, 64, 128):
            traj = transport_solution(mu0, field, cert, np.linspace(0.0, 1.0, m + 1))
            fulls.append(weak_residual(traj, field, bank).max_residual)
            rep = renormalization_check(traj, field, bank)
            parts.append(rep.max_residual)
        for seq in (fulls, parts):
            assert 1.5 < seq[0] / seq[1] < 2.8
            assert 1.5 < seq[1] / seq[2] < 2.8

    def test_nonnegative_trajectory_minus_part_vanishes(self, rotation):
        field, cert = rotation
        traj = transport_solution(D([0.4, 0.0], 2.0), field, cert, np.linspace(0.0, 1.0, 9))
        rep = renormalization_check(traj, field, bump_bank(2, 3, seed=5))
        assert rep.minus.max_residual == 0.0

    def test_cancelling_collision_negative_control(self):
        # two opposite atoms ride V = -sign(x) into the origin and cancel:
        # the signed sum stays a weak solution, the Jordan parts do not
        field, _ = builtin_field("sign", amplitude=-1.0, horizon=2.0)
        bank = [TestFunction((0.0,), 0.8)]
        part_floors = []
        for m in (32, 128, 512):
            times = np.linspace(0.0, 2.0, m + 1)
            snaps = []
            for t in times:
                a = 1.0 - t  # positive atom position (cancels at t >= 1)
                if a > 0:
                    snaps.append(D([a], 1.0) + D([-a], -1.0))
                else:
                    snaps.append(SignedParticleMeasure.empty(1))
            traj = MeasureTrajectory.from_snapshots(times, snaps)
            rep = renormalization_check(traj, field, bank)
            part_floors.append(rep.max_residual)
        # the parts' residual grows with refinement (a genuine defect, not noise)
        assert part_floors[0] > 1.0
        assert part_floors[-1] > part_floors[0]
