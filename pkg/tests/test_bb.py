import itertools
import math

import numpy as np
import pytest

from linkforge.bb import BBParams, extract_design, select_branch, solve_micp
from linkforge.core import ProblemSpec, jansen_preset
from linkforge.kin import simulate_cycle
from linkforge.model import build_model, check_assignment, encode_design
from linkforge.model.ir import AffineRow, MicpModel
from linkforge.relax import BranchState, Relaxation


def knapsack(seed, n=8):
    rng = np.random.default_rng(seed)
    val, wt = rng.integers(1, 20, n), rng.integers(1, 15, n)
    cap = int(wt.sum() // 2)
    m = MicpModel()
    xs = [m.add_var(f'x{i}', 0, 1, 'B') for i in range(n)]
    m.add_linear(list(zip(xs, wt)), '<=', cap, 'cap')
    m.set_objective(linear=[(x, -float(v)) for x, v in zip(xs, val)])
    best = min(-sum(val[i] for i in range(n) if bits[i])
               for bits in itertools.product([0, 1], repeat=n)
               if sum(wt[i] for i in range(n) if bits[i]) <= cap)
    return m, best


@pytest.mark.parametrize('seed', range(5))
def test_binary_program_matches_brute_force(seed):
    m, best = knapsack(seed)
    r = solve_micp(m)
    assert r.status == 'optimal'
    assert r.objective == pytest.approx(best, abs=1e-7)
    assert r.lower_bound <= r.objective + 1e-9


def test_sos2_interpolation_with_quadratic_objective():
    # minimise (y - 0.37)^2 where y is restricted to a PWL curve |t| on 5 breakpoints
    m = MicpModel()
    bp = np.linspace(-1, 1, 5)
    lam = [m.add_var(f'l{k}', 0, 1) for k in range(5)]
    t = m.add_var('t', -1, 1)
    y = m.add_var('y', 0, 1)
    m.add_linear([(l, 1.0) for l in lam], '=', 1, 'convex')
    m.add_linear([(l, b) for l, b in zip(lam, bp)] + [(t, -1)], '=', 0, 'tdef')
    m.add_linear([(l, abs(b)) for l, b in zip(lam, bp)] + [(y, -1)], '=', 0, 'ydef')
    m.add_linear([(t, 1.0)], '>=', 0.2, 'tmin')
    m.add_sos(2, lam, 'pwl')
    m.set_objective(squares=[AffineRow(((y, 1.0),), -0.37)])
    r = solve_micp(m)
    assert r.status == 'optimal'
    x = r.incumbent.x
    assert r.objective == pytest.approx(0.0, abs=1e-7)
    assert x[y] == pytest.approx(x[t], abs=1e-7)


def test_sos1_forces_single_choice():
    m = MicpModel()
    z = [m.add_var(f'z{k}', 0, 1) for k in range(4)]
    m.add_linear([(v, 1.0) for v in z], '=', 1, 'sum')
    m.add_sos(1, z, 'pick')
    # each choice costs (k - 1.6)^2; the relaxation prefers mixing
    cost = [(k - 1.6) ** 2 for k in range(4)]
    m.set_objective(linear=list(zip(z, cost)))
    r = solve_micp(m)
    assert np.count_nonzero(r.incumbent.x[z] > 1e-9) == 1
    assert r.objective == pytest.approx(min(cost), abs=1e-9)


def test_infeasible_and_limits():
    m = MicpModel()
    a = m.add_var('a', 0, 1, 'B')
    b = m.add_var('b', 0, 1, 'B')
    m.add_linear([(a, 1), (b, 1)], '=', 1.5, 'half')
    assert solve_micp(m).status == 'infeasible'
    m, _ = knapsack(0, 12)
    r = solve_micp(m, params=BBParams(node_limit=3))
    assert r.status in ('node_limit', 'optimal') and r.nodes <= 4


def _is_monotone(log):
    lbs = [lb for _, lb, _ in log]
    incs = [inc for _, _, inc in log]
    return (all(b >= a - 1e-12 for a, b in zip(lbs, lbs[1:]))
            and all(b <= a + 1e-12 for a, b in zip(incs, incs[1:])))


@pytest.mark.parametrize('seed', range(3))
def test_logs_monotone_and_incumbents_pass_check(seed):
    m, _ = knapsack(seed + 10, 10)
    r = solve_micp(m)
    assert r.log and _is_monotone(r.log)
    for inc in r.incumbents:
        rep = check_assignment(m, inc.x)
        assert rep['linear'] <= 1e-9 and rep['integrality'] <= 1e-9


def test_branch_selection_prefers_binaries():
    m, _ = knapsack(1)
    relax = Relaxation(m)
    res = relax.solve(BranchState())
    br = select_branch(m, res, BranchState())
    if br is not None:
        assert br.kind == 'binary' and len(br.children) == 2


def test_extract_design_recovers_jansen():
    d = jansen_preset()
    T = 4
    traj = simulate_cycle(d, T)
    spec = ProblemSpec(target=tuple(map(tuple, traj.end_effector)), K=7, S=24, T=T, epsilon=0.01)
    m, lay = build_model(spec)
    x = encode_design(d, spec, m, lay, traj=traj)
    got, gtraj = extract_design(x, lay, spec)
    assert got.topology == d.topology
    assert np.allclose(gtraj.positions, traj.positions, atol=1e-9)
    for a, b in zip(got.rod_lengths, d.rod_lengths):
        assert (a is None) == (b is None) and (a is None or np.allclose(a, b, atol=1e-9))
    assert got.motor.radius == pytest.approx(d.motor.radius, abs=1e-9)
