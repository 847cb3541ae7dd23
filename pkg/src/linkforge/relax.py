"""Continuous relaxation of a :class:`MicpModel` solved by Kelley cutting planes.

Every quadratic term is lifted into a univariate epigraph ``s >= (a.x + b)**2``.
A quadratic constraint becomes ``sum s_r <= c.x + e`` and the objective
``sum s_r + linear``; the epigraphs are then outer-approximated by tangent
lines.  Tangents of a fixed convex function are valid everywhere, so a single
cut pool is shared by every branch-and-bound node and the LP is kept alive
between calls to benefit from warm starts.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import highspy
import numpy as np

from .model.ir import MicpModel, QuadConstraint

log = logging.getLogger(__name__)

INF = highspy.kHighsInf
CUT_TOL = 1e-7
MAX_ROUNDS = 200
_SEED_POINTS = 5


class RelaxError(RuntimeError):
    """The LP core failed for numerical reasons."""


@dataclass
class BranchState:
    """Branching restrictions on top of the model's own bounds.

    ``sos`` maps a set index to an inclusive window ``(a, b)`` of members that
    may stay nonzero; everything outside the window is fixed to zero.
    """
    lb: dict = field(default_factory=dict)
    ub: dict = field(default_factory=dict)
    sos: dict = field(default_factory=dict)

    def child(self, lb=None, ub=None, sos=None) -> 'BranchState':
        out = BranchState(dict(self.lb), dict(self.ub), dict(self.sos))
        out.lb.update(lb or {})
        out.ub.update(ub or {})
        out.sos.update(sos or {})
        return out

    def window(self, set_index: int, size: int) -> tuple[int, int]:
        return self.sos.get(set_index, (0, size - 1))

    def bounds(self, model: MicpModel) -> tuple[np.ndarray, np.ndarray]:
        lb, ub = model.lb.copy(), model.ub.copy()
        for i, v in self.lb.items():
            lb[i] = max(lb[i], v)
        for i, v in self.ub.items():
            ub[i] = min(ub[i], v)
        for s, (a, b) in self.sos.items():
            members = model.sos_sets[s].members
            for j, m in enumerate(members):
                if j < a or j > b:
                    lb[m] = max(lb[m], 0.0)
                    ub[m] = min(ub[m], 0.0)
        return lb, ub

    def check(self, model: MicpModel) -> None:
        for s, (a, b) in self.sos.items():
            if not 0 <= a <= b < len(model.sos_sets[s].members):
                raise ValueError(f'bad window {(a, b)} for SOS set {s}')


@dataclass
class RelaxResult:
    status: str                     # optimal | infeasible | bound-limit
    bound: float
    x: np.ndarray | None
    max_quad_violation: float
    rounds: int = 0
    lp_iterations: int = 0


@dataclass
class LpResult:
    status: str                     # optimal | infeasible | unbounded
    x: np.ndarray | None
    objective: float
    basis: object = None


SIMPLEX_ITERATION_LIMIT = 5_000


def _set_options(h: highspy.Highs) -> None:
    h.setOptionValue('output_flag', False)
    h.setOptionValue('threads', 1)
    h.setOptionValue('random_seed', 0)
    h.setOptionValue('primal_feasibility_tolerance', 1e-10)
    h.setOptionValue('dual_feasibility_tolerance', 1e-10)
    h.setOptionValue('presolve', 'off')
    h.setOptionValue('solver', 'simplex')
    # deterministic guard against stalling; a hit falls through to the retry ladder
    h.setOptionValue('simplex_iteration_limit', SIMPLEX_ITERATION_LIMIT)
    h.setOptionValue('ipm_iteration_limit', 2000)


def _pass_lp(h, c, A, row_lo, row_hi, lb, ub, offset=0.0) -> None:
    from scipy.sparse import csc_matrix
    A = csc_matrix(A)
    lp = highspy.HighsLp()
    lp.num_col_ = A.shape[1]
    lp.num_row_ = A.shape[0]
    lp.col_cost_ = np.asarray(c, dtype=float)
    lp.col_lower_ = np.asarray(lb, dtype=float)
    lp.col_upper_ = np.asarray(ub, dtype=float)
    lp.row_lower_ = np.where(np.isfinite(row_lo), row_lo, -INF).astype(float)
    lp.row_upper_ = np.where(np.isfinite(row_hi), row_hi, INF).astype(float)
    lp.offset_ = float(offset)
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = A.indptr.astype(np.int32)
    lp.a_matrix_.index_ = A.indices.astype(np.int32)
    lp.a_matrix_.value_ = A.data.astype(float)
    h.passModel(lp)


def lp_solve(c, A, row_lo, row_hi, lb, ub, basis=None, maximize=False) -> LpResult:
    """Solve ``min c.x`` subject to ``row_lo <= A x <= row_hi``, ``lb <= x <= ub``.

    ``basis`` is a basis returned by an earlier call on an LP of the same shape.
    """
    lb, ub = np.asarray(lb, float), np.asarray(ub, float)
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
        raise ValueError('lp_solve requires finite variable bounds')
    if np.any(lb > ub):
        return LpResult('infeasible', None, math.inf)
    sign = -1.0 if maximize else 1.0
    h = highspy.Highs()
    _set_options(h)
    _pass_lp(h, sign * np.asarray(c, float), A, np.asarray(row_lo, float),
             np.asarray(row_hi, float), lb, ub)
    if basis is not None:
        h.setBasis(basis)
    h.run()
    status = h.getModelStatus()
    if status == highspy.HighsModelStatus.kInfeasible:
        return LpResult('infeasible', None, math.inf)
    if status == highspy.HighsModelStatus.kUnbounded:
        return LpResult('unbounded', None, -math.inf)
    if status != highspy.HighsModelStatus.kOptimal:
        raise RelaxError(f'LP solve ended with {h.modelStatusToString(status)}')
    x = np.array(h.getSolution().col_value)
    obj = float(np.dot(c, x))
    return LpResult('optimal', x, obj, h.getBasis())


def add_supporting_cut(con: QuadConstraint, x) -> tuple[tuple, float]:
    """Gradient cut ``terms . x <= rhs`` of ``con`` at a violating point ``x``."""
    lhs = 0.0
    grad: dict[int, float] = {}
    for row in con.rows:
        v = row.value(x)
        lhs += v * v
        for i, c in row.terms:
            grad[i] = grad.get(i, 0.0) + 2.0 * v * c
    rhs = sum(c * x[i] for i, c in con.rhs_terms) + con.rhs_const
    if lhs - rhs <= 0.0:
        raise ValueError('point satisfies the constraint; no cut to add')
    for i, c in con.rhs_terms:
        grad[i] = grad.get(i, 0.0) - c
    g = lhs - rhs
    terms = tuple(sorted((i, c) for i, c in grad.items() if c != 0.0))
    return terms, sum(c * x[i] for i, c in terms) - g


class Relaxation:
    """Persistent LP outer approximation of one model's continuous relaxation."""

    def __init__(self, model: MicpModel, tol: float = CUT_TOL, max_rounds: int = MAX_ROUNDS):
        self.model = model
        self.tol = tol
        self.max_rounds = max_rounds
        self.n = model.n
        keys: dict = {}
        self._rows: list = []            # (index array, coef array, const) per epigraph

        def epi(row) -> int:
            key = (row.terms, row.const)
            if key not in keys:
                keys[key] = len(self._rows)
                idx = np.array([i for i, _ in row.terms], dtype=int)
                coef = np.array([c for _, c in row.terms], dtype=float)
                self._rows.append((idx, coef, float(row.const)))
            return keys[key]

        self._quad_epis = [[epi(r) for r in q.rows] for q in model.quad_constraints]
        self._obj_epis = [epi(r) for r in model.objective.squares]
        self.n_epi = len(self._rows)
        self.cuts_added = 0
        self.purge_every = 25
        self._solves = 0
        self._build()

    def _ranges(self) -> tuple[np.ndarray, np.ndarray]:
        lb, ub = self.model.lb, self.model.ub
        lo = np.empty(self.n_epi)
        hi = np.empty(self.n_epi)
        for e, (idx, coef, const) in enumerate(self._rows):
            lo[e] = const + np.sum(np.where(coef > 0, coef * lb[idx], coef * ub[idx]))
            hi[e] = const + np.sum(np.where(coef > 0, coef * ub[idx], coef * lb[idx]))
        return lo, hi

    def _build(self) -> None:
        from scipy.sparse import bmat, csr_matrix
        m = self.model
        n, ne = self.n, self.n_epi
        A, row_lo, row_hi = m.linear_matrix()
        lo, hi = self._ranges()
        self._epi_lo, self._epi_hi = lo, hi
        smax = np.maximum(lo * lo, hi * hi)
        # aggregated quad rows: sum s - c.x <= e
        data, ri, ci = [], [], []
        for q, (con, epis) in enumerate(zip(m.quad_constraints, self._quad_epis)):
            for e in epis:
                ri.append(q); ci.append(n + e); data.append(1.0)
            for i, c in con.rhs_terms:
                ri.append(q); ci.append(i); data.append(-c)
        nq = len(m.quad_constraints)
        Q = csr_matrix((data, (ri, ci)), shape=(nq, n + ne))
        A_full = bmat([[csr_matrix(A, shape=(A.shape[0], n)), csr_matrix((A.shape[0], ne))]])
        A_full = bmat([[A_full], [Q]]) if nq else A_full
        q_hi = np.array([con.rhs_const for con in m.quad_constraints])
        r_lo = np.concatenate([row_lo, np.full(nq, -np.inf)])
        r_hi = np.concatenate([row_hi, q_hi])
        c = np.zeros(n + ne)
        for i, v in m.objective.linear:
            c[i] += v
        for e in self._obj_epis:
            c[n + e] += 1.0
        self._c = c
        self._lb = np.concatenate([m.lb, np.zeros(ne)])
        self._ub = np.concatenate([m.ub, smax])
        self.h = highspy.Highs()
        _set_options(self.h)
        _pass_lp(self.h, c, A_full, r_lo, r_hi, self._lb, self._ub, m.objective.constant)
        self._current_lb = self._lb.copy()
        self._current_ub = self._ub.copy()
        seeds = []
        for e in range(ne):
            pts = np.linspace(lo[e], hi[e], _SEED_POINTS)
            if lo[e] < 0.0 < hi[e]:
                pts = np.append(pts, 0.0)
            seeds.extend((e, float(p)) for p in np.unique(pts))
        self._add_cuts(seeds)
        self._n_fixed_rows = self.h.getNumRow()

    def _add_cuts(self, cuts) -> None:
        """Tangent of epigraph ``e`` at value ``v``: ``s - 2v a.x >= 2vb - v^2``."""
        if not cuts:
            return
        starts, index, value, lower = [], [], [], []
        for e, v in cuts:
            idx, coef, const = self._rows[e]
            starts.append(len(index))
            index.append(self.n + e)
            value.append(1.0)
            index.extend(idx.tolist())
            value.extend((-2.0 * v * coef).tolist())
            lower.append(2.0 * v * const - v * v)
        k = len(cuts)
        self.h.addRows(k, np.array(lower), np.full(k, INF), len(index),
                       np.array(starts, dtype=np.int32), np.array(index, dtype=np.int32),
                       np.array(value))
        self.cuts_added += k

    def _apply_bounds(self, branch: BranchState) -> bool:
        lb, ub = branch.bounds(self.model)
        if np.any(lb > ub):
            return False
        full_lb = self._lb.copy()
        full_ub = self._ub.copy()
        full_lb[:self.n] = lb
        full_ub[:self.n] = ub
        changed = np.flatnonzero((full_lb != self._current_lb) | (full_ub != self._current_ub))
        if changed.size:
            self.h.changeColsBounds(changed.size, changed.astype(np.int32),
                                    full_lb[changed], full_ub[changed])
            self._current_lb, self._current_ub = full_lb, full_ub
        return True

    def _epi_values(self, x) -> np.ndarray:
        return np.array([const + coef @ x[idx] for idx, coef, const in self._rows])

    def quad_violation(self, x) -> float:
        v = self._epi_values(x)
        sq = v * v
        worst = 0.0
        for con, epis in zip(self.model.quad_constraints, self._quad_epis):
            rhs = sum(c * x[i] for i, c in con.rhs_terms) + con.rhs_const
            worst = max(worst, float(sq[epis].sum() - rhs))
        return worst

    def _run(self):
        ok = (highspy.HighsModelStatus.kOptimal, highspy.HighsModelStatus.kInfeasible)
        self.h.run()
        status = self.h.getModelStatus()
        # fallbacks, each still a valid relaxation: cold start, fewer cuts,
        # looser tolerances, interior point with crossover
        for attempt in range(4):
            if status in ok:
                break
            log.debug('LP status %s, retry %d', self.h.modelStatusToString(status), attempt)
            if attempt == 1:
                self._drop_learned_cuts()
            elif attempt == 2:
                self.h.setOptionValue('primal_feasibility_tolerance', 1e-9)
                self.h.setOptionValue('dual_feasibility_tolerance', 1e-9)
            elif attempt == 3:
                self.h.setOptionValue('solver', 'ipm')
            self.h.clearSolver()
            self.h.run()
            status = self.h.getModelStatus()
        _set_options(self.h)
        if status == highspy.HighsModelStatus.kInfeasible:
            return None
        if status != highspy.HighsModelStatus.kOptimal:
            info = self.h.getInfo()
            raise RelaxError(
                f'LP core failed: {self.h.modelStatusToString(status)}; rows={self.h.getNumRow()}'
                f' max primal infeasibility={info.max_primal_infeasibility:.3g}'
                f' max dual infeasibility={info.max_dual_infeasibility:.3g}')
        return np.array(self.h.getSolution().col_value)

    def _drop_learned_cuts(self) -> None:
        first, total = self._n_fixed_rows, self.h.getNumRow()
        if total > first:
            self.h.deleteRows(total - first, np.arange(first, total, dtype=np.int32))

    def purge(self, slack_tol: float = 1e-6) -> int:
        """Drop learned cuts that are slack at the last LP point; seeds stay."""
        first = self._n_fixed_rows
        total = self.h.getNumRow()
        if total == first:
            return 0
        rows = np.array(self.h.getSolution().row_value)
        lp = self.h.getLp()
        lower = np.array(lp.row_lower_)
        idx = np.arange(first, total)
        drop = idx[rows[first:total] - lower[first:total] > slack_tol * (1.0 + np.abs(lower[first:total]))]
        if drop.size:
            self.h.deleteRows(drop.size, drop.astype(np.int32))
        return int(drop.size)

    def solve(self, branch: BranchState | None = None) -> RelaxResult:
        branch = branch or BranchState()
        self._solves += 1
        if self.purge_every and self._solves % self.purge_every == 0:
            self.purge()
        if not self._apply_bounds(branch):
            return RelaxResult('infeasible', math.inf, None, 0.0)
        iters = 0
        n = self.n
        for rnd in range(1, self.max_rounds + 1):
            z = self._run()
            iters += self.h.getInfo().simplex_iteration_count
            if z is None:
                return RelaxResult('infeasible', math.inf, None, 0.0, rnd, iters)
            x, s = z[:n], z[n:]
            bound = float(self.h.getInfo().objective_function_value)
            v = self._epi_values(x)
            gap = v * v - s
            cuts = []
            worst = 0.0
            for con, epis in zip(self.model.quad_constraints, self._quad_epis):
                rhs = sum(c * x[i] for i, c in con.rhs_terms) + con.rhs_const
                viol = float((v[epis] ** 2).sum() - rhs)
                worst = max(worst, viol)
                if viol > self.tol:
                    cuts.extend(e for e in epis if gap[e] > 1e-12)
            obj_gap = float(gap[self._obj_epis].sum()) if self._obj_epis else 0.0
            if obj_gap > self.tol * max(1.0, abs(bound)):
                cuts.extend(e for e in self._obj_epis if gap[e] > 1e-12)
            if not cuts:
                return RelaxResult('optimal', bound, x, max(worst, 0.0), rnd, iters)
            self._add_cuts([(e, float(v[e])) for e in dict.fromkeys(cuts)])
        return RelaxResult('bound-limit', bound, x, max(worst, 0.0), self.max_rounds, iters)


def solve_relaxation(model: MicpModel, branch: BranchState | None = None,
                     tol: float = CUT_TOL) -> RelaxResult:
    """One-shot relaxation solve from a fresh cut pool."""
    return Relaxation(model, tol).solve(branch)
