import math

import numpy as np
import pytest

from linkforge.core import LinkageDesign, Motor, ProblemSpec, Topology, jansen_preset
from linkforge.kin import (KinematicsError, propagate, simulate_cycle, trajectory_error,
                           verify_design)

from oracles import four_bar_coupler


def four_bar(direction=1, parents=(0, 1)):
    topo = Topology((True,) * 3, (False, True, False), (None, None, parents), direction)
    return LinkageDesign(topo, (None, None, (0.5, 0.45)), (None, (0.35, -0.1), None),
                         Motor((-0.2, 0.05), 0.18, 0.3))


@pytest.mark.parametrize('direction', [0, 1])
def test_four_bar_matches_independent_solution(direction):
    d = four_bar(direction)
    traj = simulate_cycle(d, 12)
    ref = four_bar_coupler((-0.2, 0.05), 0.18, 0.3, (0.35, -0.1), 0.5, 0.45, 12,
                           clockwise=direction == 1)
    assert np.allclose(traj.end_effector, ref, atol=1e-12)


def test_direction_reverses_sample_order():
    T = 10
    cw = simulate_cycle(four_bar(1), T).positions[:, 0]
    ccw = simulate_cycle(four_bar(0), T).positions[:, 0]
    # t = 2pi(d+1)/T clockwise equals t = 2pi(T-d-1)/T counter-clockwise
    for d in range(T - 1):
        assert np.allclose(cw[d], ccw[T - d - 2], atol=1e-12)


def test_chosen_branch_has_positive_cross():
    P = simulate_cycle(four_bar(), 16).positions
    d1, d2 = P[:, 0] - P[:, 2], P[:, 1] - P[:, 2]
    assert np.all(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] > 0)


def test_unreachable_configuration_raises():
    topo = Topology((True,) * 3, (False, True, False), (None, None, (0, 1)), 1)
    bad = LinkageDesign(topo, (None, None, (0.1, 0.1)), (None, (0.8, 0.0), None),
                        Motor((0.0, 0.0), 0.2))
    with pytest.raises(KinematicsError):
        simulate_cycle(bad, 8)
    with pytest.raises(KinematicsError):
        propagate(bad, 0.0)


def test_jansen_fixture_fidelity():
    d = jansen_preset()
    traj = simulate_cycle(d, 64)
    P = traj.positions
    for i in range(1, d.K):
        if d.topology.movable(i):
            for j, L in zip(d.topology.parents[i], d.rod_lengths[i]):
                drift = np.abs(np.linalg.norm(P[:, j] - P[:, i], axis=1) - L)
                assert drift.max() <= 1e-9
    ee = traj.end_effector
    steps = np.linalg.norm(np.diff(np.vstack([ee, ee[:1]]), axis=0), axis=1)
    assert steps.max() < 2.0 / 4        # closed curve, no jumps
    assert np.max(np.abs(P)) <= 1.0


def test_verify_reports_failures():
    d = four_bar()
    traj = simulate_cycle(d, 8)
    spec = ProblemSpec(target=tuple(map(tuple, traj.end_effector)), K=3, S=5)
    assert verify_design(d, spec).passed
    strict = spec.with_(l_min=0.3)
    rep = verify_design(d, strict)
    assert not rep.passed and any('l_min' in f for f in rep.failures)
    noisy = traj.positions.copy()
    noisy[3, 2] += 1e-3
    from linkforge.core import Trajectory
    rep = verify_design(d, spec, Trajectory(noisy))
    assert rep.equidistance_residual > 1e-4 and not rep.passed


def test_trajectory_error_alignment():
    rng = np.random.default_rng(1)
    tgt = rng.uniform(-0.5, 0.5, (6, 2))
    shifted = np.roll(tgt[::-1], 2, axis=0)
    assert trajectory_error(shifted, tgt) > 0.1
    assert trajectory_error(shifted, tgt, w=0.01, used_count=4, align=True) == pytest.approx(0.04)
    with pytest.raises(ValueError):
        trajectory_error(tgt[:5], tgt)
