"""Full-size acceptance checks; each prints one PASS/FAIL line.

Runtime is dominated by the search-based checks (about half an hour on one core).
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from linkforge.bb import BBParams
from linkforge.cli import main
from linkforge.core import ProblemSpec, Trajectory, jansen_preset
from linkforge.instances import generate_instance
from linkforge.kin import simulate_cycle, verify_design
from linkforge.model import PwlGrid, SectorTable, build_model, check_assignment
from linkforge.pipeline import synthesize, topology_oracle
from linkforge.refine import (inequalities_and_jacobian, problem_from, refine,
                              residuals_and_jacobian)
from linkforge.relax import CUT_TOL
from linkforge.sa import SaConfig, sa_search

from oracles import ccw_angle

ORACLE_SEEDS = range(1, 11)
ORACLE_BB_LIMIT = 240.0
ORACLE_SUB_LIMIT = 15.0
RECOVER_SEEDS = range(1, 6)
RECOVER_LIMIT = 600.0
SA_ITERATIONS = 100_000
SA_SEEDS = (1, 2, 3)


def report(n: int, ok: bool, detail: str) -> None:
    line = f'criterion {n:2d}: {"PASS" if ok else "FAIL"}  {detail}'
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _monotone(log) -> bool:
    lbs = [lb for _, lb, _ in log]
    incs = [inc for _, _, inc in log]
    return (all(b >= a - 1e-12 for a, b in zip(lbs, lbs[1:]))
            and all(b <= a + 1e-12 for a, b in zip(incs, incs[1:])))


@pytest.fixture(scope='module')
def oracle_runs():
    runs = []
    for seed in ORACLE_SEEDS:
        inst = generate_instance(4, 5, 4, seed, n=3)
        m, _ = build_model(inst.spec)
        t = time.perf_counter()
        res = synthesize(inst.spec, BBParams(time_limit=ORACLE_BB_LIMIT))
        elapsed = time.perf_counter() - t
        ora = topology_oracle(inst.spec, BBParams(time_limit=ORACLE_SUB_LIMIT))
        runs.append((seed, inst, m, res, elapsed, ora))
    return runs


@pytest.fixture(scope='module')
def recover_runs():
    runs = []
    for seed in RECOVER_SEEDS:
        inst = generate_instance(5, 9, 8, seed, n=4, w=0.0)
        t = time.perf_counter()
        res = synthesize(inst.spec, BBParams(time_limit=RECOVER_LIMIT))
        runs.append((seed, inst, res, time.perf_counter() - t))
    return runs


def test_criterion_01_oracle_equivalence(oracle_runs):
    bad, notes = [], []
    for seed, _, _, res, elapsed, ora in oracle_runs:
        bb = res.bb
        rel = abs(bb.objective - ora.objective) / max(abs(ora.objective), 1e-12)
        notes.append(f'{seed}:{bb.status[0]}{"" if ora.exhaustive else "*"}')
        if not (rel <= 1e-6 and elapsed <= 300):
            bad.append((seed, bb.objective, ora.objective, round(elapsed, 1)))
    report(1, not bad, f'{len(oracle_runs)} instances K=4 S=5 T=4 '
           f'({" ".join(notes)}; *=oracle hit a sub-limit) mismatches={bad}')


def test_criterion_02_generate_and_recover(recover_runs):
    rows = []
    for seed, inst, res, elapsed in recover_runs:
        track = res.objective if res.design is not None else math.inf
        rows.append((seed, track, res.verified, elapsed))
    ok = all(t <= 1e-4 and v and e <= 7200 for _, t, v, e in rows)
    detail = ' '.join(f'{s}:{t:.1e}{"" if v else "(unverified)"}/{e:.0f}s' for s, t, v, e in rows)
    report(2, ok, f'K=5 S=9 T=8 w=0 tracking per seed: {detail}')


def test_criterion_03_pwl_bound():
    rng = np.random.default_rng(0)
    worst = -math.inf
    ok = True
    for S in (3, 5, 9, 17):
        g = PwlGrid(1.0, S)
        a = g.breakpoints
        v = rng.uniform(-1, 1, 10_000)
        k = np.clip(np.searchsorted(a, v, side='right') - 1, 0, S - 2)
        t = (v - a[k]) / (a[k + 1] - a[k])
        tilde = (1 - t) * a[k] ** 2 + t * a[k + 1] ** 2
        spot = [g.upper(x) for x in v[:200]]
        ok &= np.allclose(spot, tilde[:200], atol=1e-15)
        lo = tilde - v ** 2
        hi = v ** 2 + g.max_gap + 1e-12 - tilde
        ok &= bool(lo.min() >= -1e-15 and hi.min() >= 0)
        worst = max(worst, float((lo / g.max_gap).max()))
    report(3, ok, f'10^4 points for S in 3,5,9,17; worst gap / bound = {worst:.4f}')


def _admitted(table, D1, D2, tol=0.0):
    m = np.stack([D1 @ table.left.T, -(D1 @ table.right.T), -(D2 @ table.left_eps.T),
                  D2 @ table.right_pi.T], axis=2)
    return np.any(np.all(m >= -tol, axis=2), axis=1)


def test_criterion_04_sector_soundness():
    rng = np.random.default_rng(4)
    S, eps = 9, 0.1
    table = SectorTable(S, eps)
    pairs = []
    while sum(len(p[0]) for p in pairs) < 100_000:
        D1, D2 = rng.normal(size=(100_000, 2)), rng.normal(size=(100_000, 2))
        ok = _admitted(table, D1, D2)
        pairs.append((D1[ok], D2[ok]))
    D1 = np.concatenate([p[0] for p in pairs])[:100_000]
    D2 = np.concatenate([p[1] for p in pairs])[:100_000]
    ang = np.mod(np.arctan2(D1[:, 0] * D2[:, 1] - D1[:, 1] * D2[:, 0],
                            np.sum(D1 * D2, axis=1)), 2 * np.pi)
    spot = [ccw_angle(a, b) for a, b in zip(D1[:100], D2[:100])]
    sound = bool(ang.min() >= eps - 1e-12 and np.allclose(spot, ang[:100]))
    th = rng.uniform(eps + 2 * np.pi / S, np.pi - 2 * np.pi / S, 100_000)
    phi = rng.uniform(0, 2 * np.pi, 100_000)
    r1, r2 = rng.uniform(0.05, 1, 100_000), rng.uniform(0.05, 1, 100_000)
    E1 = np.stack([r1 * np.cos(phi), r1 * np.sin(phi)], 1)
    E2 = np.stack([r2 * np.cos(phi + th), r2 * np.sin(phi + th)], 1)
    complete = bool(_admitted(table, E1, E2, tol=1e-12).all())
    report(4, sound and complete, f'S={S} eps={eps}: min admitted angle {ang.min():.4f}, '
           f'all 10^5 in-range pairs admitted={complete}')


def test_criterion_05_residual_shrinks_with_s():
    # a four-node curve fitted with at most three nodes: no exact fit exists,
    # so the MICP optimum leans on the PWL slack
    target = generate_instance(4, 5, 6, 1, n=4).spec.target
    residual = {}
    for S in (5, 17):
        spec = ProblemSpec(target=target, K=3, S=S, T=6)
        res = synthesize(spec, BBParams(time_limit=120), do_refine=False)
        assert res.raw_design is not None, f'no MICP solution at S={S}'
        rep = verify_design(res.raw_design, spec, res.raw_trajectory, residual_tol=math.inf)
        residual[S] = rep.equidistance_residual
    report(5, residual[17] <= residual[5],
           f'unrefined equidistance residual S=5: {residual[5]:.3g}, S=17: {residual[17]:.3g}')


def test_criterion_06_kinematic_fidelity():
    d = jansen_preset()
    traj = simulate_cycle(d, 64)
    P = traj.positions
    drift = 0.0
    for i in range(1, d.K):
        if d.topology.movable(i):
            for j, L in zip(d.topology.parents[i], d.rod_lengths[i]):
                drift = max(drift, float(np.abs(np.linalg.norm(P[:, j] - P[:, i], axis=1) - L).max()))
    ee = np.vstack([traj.end_effector, traj.end_effector[:1]])
    closed = float(np.linalg.norm(np.diff(ee, axis=0), axis=1).max()) < 0.5
    T = 16
    t16 = simulate_cycle(d, T)
    spec = ProblemSpec(target=tuple(map(tuple, t16.end_effector)), K=7, S=24, T=T, epsilon=0.01)
    rng = np.random.default_rng(6)
    after = []
    for _ in range(3):
        noisy = Trajectory(t16.positions + rng.uniform(-1e-3, 1e-3, t16.positions.shape))
        _, _, rep = refine(d, noisy, spec)
        after.append(rep.eq_residual_after)
    p = problem_from(d, spec)
    x0 = p.pack(t16.positions, d.motor.center)
    jac_err = 0.0
    for fun in (residuals_and_jacobian, inequalities_and_jacobian):
        x = x0 + rng.normal(0, 0.02, x0.size)
        _, J = fun(p, x)
        J = J.toarray()
        h = 1e-6
        Jn = np.empty_like(J)
        for k in range(x.size):
            e = np.zeros(x.size)
            e[k] = h
            Jn[:, k] = (fun(p, x + e, False)[0] - fun(p, x - e, False)[0]) / (2 * h)
        jac_err = max(jac_err, float(np.abs(J - Jn).max() / np.abs(Jn).max()))
    ok = drift <= 1e-9 and closed and max(after) <= 1e-8 and jac_err <= 1e-6
    report(6, ok, f'Jansen drift {drift:.1e}, closed={closed}, refined residuals '
           f'{max(after):.1e}, Jacobian rel err {jac_err:.1e}')


def test_criterion_07_incumbent_integrity(oracle_runs):
    count, worst = 0, {'linear': 0.0, 'integrality': 0.0, 'quad': 0.0, 'bound': 0.0, 'sos': 0.0}
    for _, _, m, res, _, _ in oracle_runs:
        for inc in res.bb.incumbents:
            rep = check_assignment(m, inc.x)
            count += 1
            for k in worst:
                worst[k] = max(worst[k], rep[k])
    ok = (count > 0 and worst['linear'] <= 1e-9 and worst['integrality'] <= 1e-9
          and worst['bound'] <= 1e-9 and worst['sos'] <= 1e-9 and worst['quad'] <= CUT_TOL)
    report(7, ok, f'{count} incumbents; worst violations '
           + ', '.join(f'{k}={v:.1e}' for k, v in worst.items()))


def test_criterion_08_sa_comparison(oracle_runs):
    wins, rows = 0, []
    for seed, inst, _, res, _, _ in oracle_runs[:5]:
        sa_best = min(sa_search(inst.spec, SaConfig(iterations=SA_ITERATIONS, seed=s)).objective
                      for s in SA_SEEDS)
        wins += res.objective <= sa_best
        rows.append(f'{seed}:{res.objective:.5f}/{sa_best:.5f}')
    report(8, wins >= 4, f'MICP <= SA on {wins}/5 (micp/sa: {" ".join(rows)})')


def test_criterion_09_log_shape(oracle_runs):
    logs = [res.bb.log for *_, res, _, _ in oracle_runs]
    ok = all(log and _monotone(log) for log in logs)
    report(9, ok, f'{len(logs)} convergence logs, {sum(map(len, logs))} entries, all monotone={ok}')


def test_criterion_10_determinism(tmp_path):
    inst = generate_instance(4, 5, 4, 2, n=3)
    prob = tmp_path / 'p.json'
    prob.write_text(json.dumps({'target': [list(p) for p in inst.spec.target],
                                'K': 4, 'S': 5, 'T': 4, 'time_limit_s': 300}))
    outs = []
    for k in range(2):
        out, svg = tmp_path / f'd{k}.json', tmp_path / f'd{k}.svg'
        code = main(['synth', str(prob), '-o', str(out), '--svg', str(svg), '--workers', '1'])
        outs.append((code, out.read_bytes(), svg.read_bytes()))
    ok = outs[0] == outs[1]
    report(10, ok, f'exit {outs[0][0]}, DesignFile {len(outs[0][1])} B and SVG '
           f'{len(outs[0][2])} B byte-identical={ok}')
