import numpy as np
import pytest

from linkforge.core import ProblemSpec, Trajectory, UserConstraints, jansen_preset
from linkforge.kin import simulate_cycle, verify_design
from linkforge.refine import (design_from, inequalities_and_jacobian, problem_from, refine,
                              residuals_and_jacobian)


def _jansen(T=8, **kw):
    d = jansen_preset()
    traj = simulate_cycle(d, T)
    spec = ProblemSpec(target=tuple(map(tuple, traj.end_effector)), K=7, S=24, T=T,
                       epsilon=0.01, **kw)
    return d, traj, spec


def _fd(fun, x, h=1e-6):
    cols = []
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        cols.append((fun(x + e)[0] - fun(x - e)[0]) / (2 * h))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize('which', [residuals_and_jacobian, inequalities_and_jacobian])
@pytest.mark.parametrize('extras', [False, True])
def test_jacobians_match_finite_differences(which, extras):
    d, traj, spec = _jansen(T=5)
    if extras:
        uc = UserConstraints(fixed_nodes=((1, (0.1, 0.2)),),
                             containment_polygon=((-1, -1), (1, -1), (1, 1), (-1, 1)))
        spec = spec.with_(user_constraints=uc)
    p = problem_from(d, spec, epsilon=0.2 if extras else None, offset_bound=extras)
    x0 = p.pack(traj.positions, d.motor.center)
    rng = np.random.default_rng(3)
    for _ in range(2):
        x = x0 + rng.normal(0, 0.05, x0.size)
        _, J = which(p, x)
        Jn = _fd(lambda y: which(p, y), x)
        assert np.abs(J.toarray() - Jn).max() <= 1e-6 * np.abs(Jn).max()


def test_exact_design_has_zero_residual():
    d, traj, spec = _jansen()
    p = problem_from(d, spec)
    h, _ = residuals_and_jacobian(p, p.pack(traj.positions, d.motor.center))
    assert np.abs(h).max() < 1e-12


def test_refine_restores_perturbed_fixture():
    d, traj, spec = _jansen()
    rng = np.random.default_rng(0)
    noisy = Trajectory(traj.positions + rng.uniform(-1e-3, 1e-3, traj.positions.shape))
    new, out, rep = refine(d, noisy, spec)
    assert rep.eq_residual_before > 1e-4
    assert rep.eq_residual_after <= 1e-8
    assert rep.objective_after <= rep.objective_before
    assert verify_design(new, spec).passed
    sim = simulate_cycle(new, spec.T)
    assert np.abs(sim.end_effector - spec.target_array).max() < 1e-3


def test_design_from_inverts_pack():
    d, traj, spec = _jansen()
    p = problem_from(d, spec)
    back = design_from(p, p.pack(traj.positions, d.motor.center))
    for a, b in zip(back.rod_lengths, d.rod_lengths):
        assert (a is None) == (b is None)
        if a is not None:
            assert np.allclose(a, b, atol=1e-12)
    assert back.motor.radius == pytest.approx(d.motor.radius, abs=1e-12)
    assert back.motor.phase == pytest.approx(d.motor.phase, abs=1e-12)


def test_user_pins_are_honoured():
    d, traj, spec0 = _jansen()
    pivot = d.fixed_positions[1]
    moved = (pivot[0] + 2e-3, pivot[1] - 1e-3)
    spec = spec0.with_(user_constraints=UserConstraints(fixed_nodes=((1, moved),)))
    rng = np.random.default_rng(1)
    noisy = Trajectory(traj.positions + rng.uniform(-1e-4, 1e-4, traj.positions.shape))
    new, _, rep = refine(d, noisy, spec)
    assert np.allclose(new.fixed_positions[1], moved, atol=1e-8)
    assert rep.eq_residual_after <= 1e-8


def test_refine_rejects_topology_change_input():
    d, traj, spec = _jansen()
    with pytest.raises(ValueError):
        refine(d, Trajectory(traj.positions[:, :5]), spec)
