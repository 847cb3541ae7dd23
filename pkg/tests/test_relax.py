import math

import numpy as np
import pytest

from linkforge.model.ir import AffineRow, MicpModel
from linkforge.relax import BranchState, Relaxation, add_supporting_cut, lp_solve

from oracles import dense_simplex


def _random_lp(rng, m=20, n=40):
    A = rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.4)
    x0 = rng.uniform(-1, 1, n)
    act = A @ x0
    row_lo = np.where(rng.random(m) < 0.5, act - rng.uniform(0, 1, m), -np.inf)
    row_hi = np.where(rng.random(m) < 0.7, act + rng.uniform(0, 1, m), np.inf)
    lb = -2 + rng.uniform(0, 0.5, n)
    ub = 2 - rng.uniform(0, 0.5, n)
    c = rng.normal(size=n)
    return c, A, row_lo, row_hi, lb, ub


@pytest.mark.parametrize('seed', range(8))
def test_lp_solve_matches_dense_simplex(seed):
    rng = np.random.default_rng(seed)
    c, A, lo, hi, lb, ub = _random_lp(rng)
    got = lp_solve(c, A, lo, hi, lb, ub)
    status, x, obj = dense_simplex(c, A, lo, hi, lb, ub)
    assert got.status == status == 'optimal'
    assert got.objective == pytest.approx(obj, rel=1e-7, abs=1e-7)
    # the returned point is feasible
    Ax = A @ got.x
    assert np.all(Ax <= np.where(np.isfinite(hi), hi, np.inf) + 1e-8)
    assert np.all(Ax >= np.where(np.isfinite(lo), lo, -np.inf) - 1e-8)


def test_lp_solve_infeasible_and_maximize():
    A = np.array([[1.0, 1.0]])
    res = lp_solve([1, 1], A, [3.0], [np.inf], [0, 0], [1, 1])
    assert res.status == 'infeasible'
    assert dense_simplex([1, 1], A, [3.0], [np.inf], [0, 0], [1, 1])[0] == 'infeasible'
    res = lp_solve([1, 2], A, [-np.inf], [1.5], [0, 0], [1, 1], maximize=True)
    assert res.objective == pytest.approx(2.5)


def test_lp_solve_rejects_infinite_bounds():
    with pytest.raises(ValueError):
        lp_solve([1.0], np.ones((1, 1)), [0.0], [1.0], [-np.inf], [1.0])


def _disc_model():
    """min (x-2)^2 + (y-2)^2 subject to x^2 + y^2 <= 1."""
    m = MicpModel()
    x = m.add_var('x', -3, 3)
    y = m.add_var('y', -3, 3)
    m.add_quad([AffineRow(((x, 1.0),), 0.0), AffineRow(((y, 1.0),), 0.0)], (), 1.0, 'disc')
    m.set_objective(squares=[AffineRow(((x, 1.0),), -2.0), AffineRow(((y, 1.0),), -2.0)])
    return m


def test_relaxation_converges_on_convex_problem():
    m = _disc_model()
    res = Relaxation(m, tol=1e-9).solve()
    assert res.status == 'optimal'
    s = 1 / math.sqrt(2)
    exact = 2 * (2 - s) ** 2
    # an outer approximation never overshoots the true optimum
    assert res.bound <= exact + 1e-9
    assert res.bound == pytest.approx(exact, abs=1e-6)
    assert res.x[0] == pytest.approx(s, abs=1e-4)


def test_relaxation_respects_branch_bounds():
    m = _disc_model()
    rel = Relaxation(m)
    res = rel.solve(BranchState(ub={0: -0.5}))
    assert res.x[0] <= -0.5 + 1e-9
    assert rel.solve(BranchState(lb={0: 1.5})).status == 'infeasible'
    # the shared cut pool does not leak between branches
    assert rel.solve().bound == pytest.approx(2 * (2 - 1 / math.sqrt(2)) ** 2, abs=1e-6)


def test_supporting_cut_is_valid_and_separates():
    m = _disc_model()
    con = m.quad_constraints[0]
    point = np.array([1.0, 1.0])
    terms, rhs = add_supporting_cut(con, point)
    lhs = lambda p: sum(c * p[i] for i, c in terms)
    assert lhs(point) > rhs
    rng = np.random.default_rng(0)
    for _ in range(2000):
        r, t = math.sqrt(rng.random()), rng.uniform(0, 2 * math.pi)
        q = np.array([r * math.cos(t), r * math.sin(t)])
        assert lhs(q) <= rhs + 1e-12
    with pytest.raises(ValueError):
        add_supporting_cut(con, np.array([0.1, 0.1]))
