import math
from pathlib import Path

import numpy as np
import pytest

from linkforge.core import ProblemSpec, jansen_preset
from linkforge.kin import simulate_cycle
from linkforge.model import (EncodingError, PwlGrid, SectorTable, build_model, check_assignment,
                             encode_design, expected_counts, export_model, is_feasible,
                             log_encode_sos, parse_model)
from linkforge.model.mps import MpsParseError

from oracles import ccw_angle, chord_square

GOLDEN = Path(__file__).parent / 'golden'


def small_spec(K=3, S=5, T=4):
    t = np.linspace(0, 2 * np.pi, T, endpoint=False)
    target = tuple((0.3 * math.cos(a), 0.2 * math.sin(a)) for a in t)
    return ProblemSpec(target=target, K=K, S=S, T=T)


@pytest.mark.parametrize('K,S,T', [(3, 3, 3), (4, 5, 4), (5, 9, 6)])
def test_model_sizes(K, S, T):
    m, _ = build_model(small_spec(K, S, T))
    ec = expected_counts(K, S, T)
    assert m.n == ec['variables']
    assert len(m.binaries) == ec['binaries']
    assert len(m.linear_constraints) == ec['linear']
    assert len(m.quad_constraints) == ec['quad']
    assert sum(s.kind == 1 for s in m.sos_sets) == ec['sos1']
    assert sum(s.kind == 2 for s in m.sos_sets) == ec['sos2']


@pytest.fixture(scope='module')
def jansen_model():
    d = jansen_preset()
    T = 6
    traj = simulate_cycle(d, T)
    spec = ProblemSpec(target=tuple(map(tuple, traj.end_effector)), K=7, S=24, T=T, epsilon=0.01)
    m, lay = build_model(spec)
    return d, traj, spec, m, lay


def test_jansen_encodes_feasibly(jansen_model):
    d, traj, spec, m, lay = jansen_model
    x = encode_design(d, spec, m, lay, traj=traj)
    rep = check_assignment(m, x)
    assert is_feasible(rep), rep
    # zero tracking error: objective is the node penalty only
    assert m.objective_value(x) == pytest.approx(spec.w * 7, abs=1e-12)


def test_coarse_grid_cannot_encode_jansen():
    d = jansen_preset()
    traj = simulate_cycle(d, 4)
    spec = ProblemSpec(target=tuple(map(tuple, traj.end_effector)), K=7, S=5, T=4)
    m, lay = build_model(spec)
    with pytest.raises(EncodingError):
        encode_design(d, spec, m, lay, traj=traj)


@pytest.mark.parametrize('S', [3, 5, 9, 17])
def test_pwl_matches_independent_chord(S):
    g = PwlGrid(1.0, S)
    for v in np.linspace(-1, 1, 101):
        assert g.upper(v) == pytest.approx(chord_square(v, 1.0, S), abs=1e-14)
        w = g.weights(v)
        assert w.sum() == pytest.approx(1.0) and w @ g.breakpoints == pytest.approx(v)
        assert np.count_nonzero(w) <= 2


def _admitted(table: SectorTable, D1, D2, tol=0.0):
    m = np.stack([D1 @ table.left.T, -(D1 @ table.right.T), -(D2 @ table.left_eps.T),
                  D2 @ table.right_pi.T], axis=2)
    return np.any(np.all(m >= -tol, axis=2), axis=1)


@pytest.mark.parametrize('S,eps', [(5, 0.1), (9, 0.1), (24, 0.01)])
def test_sector_soundness_and_coverage(S, eps):
    rng = np.random.default_rng(S)
    table = SectorTable(S, eps)
    D1 = rng.normal(size=(20000, 2))
    D2 = rng.normal(size=(20000, 2))
    ok = _admitted(table, D1, D2)
    assert ok.any()
    for a, b in zip(D1[ok], D2[ok]):
        assert eps - 1e-12 <= ccw_angle(a, b) <= math.pi + 1e-12
    # every angle in [eps + pi/S, pi - pi/S] is admitted by some wedge
    th = rng.uniform(eps + math.pi / S, math.pi - math.pi / S, 20000)
    phi = rng.uniform(0, 2 * math.pi, 20000)
    r1, r2 = rng.uniform(0.05, 1, 20000), rng.uniform(0.05, 1, 20000)
    D1 = np.stack([r1 * np.cos(phi), r1 * np.sin(phi)], axis=1)
    D2 = np.stack([r2 * np.cos(phi + th), r2 * np.sin(phi + th)], axis=1)
    assert _admitted(table, D1, D2, tol=1e-12).all()


def test_mps_roundtrip_and_golden():
    m, _ = build_model(small_spec(3, 3, 3))
    text = export_model(m)
    assert parse_model(text) == m
    assert export_model(parse_model(text)) == text
    assert text == (GOLDEN / 'k3.mps').read_text()


def test_log_encoding_preserves_feasible_points():
    d = jansen_preset()
    traj = simulate_cycle(d, 3)
    spec = ProblemSpec(target=tuple(map(tuple, traj.end_effector)), K=7, S=24, T=3, epsilon=0.01)
    m, lay = build_model(spec)
    x = encode_design(d, spec, m, lay, traj=traj)
    log_model = log_encode_sos(m)
    assert not log_model.sos_sets
    assert len(log_model.binaries) > len(m.binaries)
    text = export_model(m, 'log')
    assert parse_model(text) == log_model


def test_mps_parse_errors_carry_line_numbers():
    m, _ = build_model(small_spec(3, 3, 3))
    lines = export_model(m).splitlines()
    k = next(i for i in range(lines.index('COLUMNS') + 1, len(lines))
             if "'MARKER'" not in lines[i])
    good = lines[k]
    lines[k] = '    nosuchvar  OBJ  1.0'
    with pytest.raises(MpsParseError, match=f'line {k + 1}: column nosuchvar'):
        parse_model('\n'.join(lines))
    lines[k] = good.replace(good.split()[1], 'NOROW')
    with pytest.raises(MpsParseError, match=f'line {k + 1}: unknown row'):
        parse_model('\n'.join(lines))
    lines[k] = good.rsplit(' ', 1)[0] + ' 1.0x'
    with pytest.raises(MpsParseError, match=f'line {k + 1}'):
        parse_model('\n'.join(lines))
