"""Constraint-family builders for the joint topology/trajectory program.

Each ``add_*`` function appends one family to a :class:`MicpModel` and records
the indices it creates in the shared :class:`VariableLayout`.  Node, timestep
and parent-slot indices are zero-based; parent slot ``k`` is 0 for the first
parent and 1 for the second.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import ProblemSpec, SpecError
from .geometry import PwlGrid, SectorTable
from .ir import BINARY, AffineRow, MicpModel


def _idx(shape) -> np.ndarray:
    return np.full(shape, -1, dtype=int)


@dataclass
class VariableLayout:
    K: int
    T: int
    S: int
    U: np.ndarray
    F: np.ndarray
    D: int
    XC: int
    YC: int
    x: np.ndarray          # (K, T)
    y: np.ndarray
    C: np.ndarray          # (K, K), entry [j, i] for j < i
    C1: np.ndarray
    C2: np.ndarray
    C0: np.ndarray         # (2, K) verbose "connected to nothing" selectors
    Q: np.ndarray          # (K, K) forward flux
    R: np.ndarray          # (K, K) reverse flux
    dx: np.ndarray         # (2, K, T) parent-relative offsets
    dy: np.ndarray
    tdx: np.ndarray        # (2, K, T) squared upper bounds
    tdy: np.ndarray
    lam_dx: np.ndarray     # (2, K, T, S) interpolation weights
    lam_dy: np.ndarray
    gamma: np.ndarray      # (K, T, 2S) sector selectors
    # SOS set index -> binary that switches every constraint on the set off at 1
    guards: dict = None

    @classmethod
    def empty(cls, K: int, T: int, S: int) -> 'VariableLayout':
        return cls(K, T, S, _idx(K), _idx(K), -1, -1, -1, _idx((K, T)), _idx((K, T)),
                   _idx((K, K)), _idx((K, K)), _idx((K, K)), _idx((2, K)),
                   _idx((K, K)), _idx((K, K)), _idx((2, K, T)), _idx((2, K, T)),
                   _idx((2, K, T)), _idx((2, K, T)), _idx((2, K, T, S)), _idx((2, K, T, S)),
                   _idx((K, T, 2 * S)), {})

    def symbols(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ('U', 'F', 'x', 'y', 'C', 'C1', 'C2', 'C0', 'Q', 'R', 'dx', 'dy',
                     'tdx', 'tdy', 'lam_dx', 'lam_dy', 'gamma'):
            out[name] = getattr(self, name)
        for name in ('D', 'XC', 'YC'):
            out[name] = np.array([getattr(self, name)])
        return out

    def all_indices(self) -> np.ndarray:
        return np.concatenate([a[a >= 0].ravel() for a in self.symbols().values()])

    def connect_vars(self, k: int) -> np.ndarray:
        return self.C1 if k == 0 else self.C2


def big_m(spec: ProblemSpec) -> dict[str, float]:
    B = spec.B
    return {'dist': 2 * B, 'sq': 8 * B * B, 'sector': 2 * math.sqrt(2) * B}


def declare_positions(model: MicpModel, layout: VariableLayout, spec: ProblemSpec) -> None:
    """Node-state binaries, motor center, direction flag and node positions."""
    B = spec.B
    for i in range(spec.K):
        layout.U[i] = model.add_var(f'U[{i}]', 0, 1, BINARY)
        layout.F[i] = model.add_var(f'F[{i}]', 0, 1, BINARY)
    layout.D = model.add_var('D', 0, 1, BINARY)
    layout.XC = model.add_var('XC', -B, B)
    layout.YC = model.add_var('YC', -B, B)
    for i in range(spec.K):
        for d in range(spec.T):
            layout.x[i, d] = model.add_var(f'x[{i},{d}]', -B, B)
            layout.y[i, d] = model.add_var(f'y[{i},{d}]', -B, B)


def add_state_constraints(model, layout, spec) -> None:
    """``1 - F_i <= U_i`` for every node; motor and end-effector used, motor movable."""
    for i in range(spec.K):
        model.add_linear([(layout.U[i], 1.0), (layout.F[i], 1.0)], '>=', 1.0,
                         f'state[{i}]', 'state')
    model.fix(layout.U[0], 1.0)
    model.fix(layout.U[spec.K - 1], 1.0)
    model.fix(layout.F[0], 0.0)


def add_connectivity_constraints(model, layout, spec) -> None:
    K = spec.K
    fam = 'connectivity'
    for i in range(1, K):
        for j in range(i):
            layout.C[j, i] = model.add_var(f'C[{j},{i}]', 0, 1)
            layout.C1[j, i] = model.add_var(f'C1[{j},{i}]', 0, 1)
            layout.C2[j, i] = model.add_var(f'C2[{j},{i}]', 0, 1)
        for k in range(2):
            layout.C0[k, i] = model.add_var(f'C0[{k + 1},{i}]', 0, 1)
    for i in range(1, K):
        for j in range(i):
            model.add_linear([(layout.C[j, i], 1.0), (layout.C1[j, i], -1.0),
                              (layout.C2[j, i], -1.0)], '=', 0.0, f'split[{j},{i}]', fam)
            for k in range(2):
                model.add_linear([(layout.connect_vars(k)[j, i], 1.0), (layout.U[j], -1.0)],
                                 '<=', 0.0, f'parent_used[{k + 1},{j},{i}]', fam)
        model.add_linear([(layout.C[j, i], 1.0) for j in range(i)] + [(layout.F[i], 2.0)],
                         '=', 2.0, f'degree[{i}]', fam)
        for k in range(2):
            members = [layout.C0[k, i]] + [layout.connect_vars(k)[j, i] for j in range(i)]
            model.add_linear([(m, 1.0) for m in members], '=', 1.0,
                             f'choose[{k + 1},{i}]', fam)
            model.add_sos(1, members, f'parent[{k + 1},{i}]', 'topology')


def add_flow_constraints(model, layout, spec) -> None:
    K = spec.K
    fam = 'flow'
    for i in range(1, K):
        for j in range(i):
            layout.Q[j, i] = model.add_var(f'Q[{j},{i}]', 0, K)
            model.add_linear([(layout.Q[j, i], 1.0), (layout.C[j, i], -float(K))], '<=', 0.0,
                             f'flow_cap[{j},{i}]', fam)
    for i in range(K - 1):
        terms = [(layout.U[i], 1.0)]
        terms += [(layout.Q[j, i], 1.0) for j in range(i)]
        terms += [(layout.Q[i, k], -1.0) for k in range(i + 1, K)]
        model.add_linear(terms, '=', 0.0, f'flow_balance[{i}]', fam)


def add_reverse_flow_constraints(model, layout, spec) -> None:
    K = spec.K
    fam = 'reverse_flow'
    for i in range(1, K):
        for j in range(i):
            layout.R[j, i] = model.add_var(f'R[{j},{i}]', 0, K)
            model.add_linear([(layout.R[j, i], 1.0), (layout.C[j, i], -float(K))], '<=', 0.0,
                             f'rflow_cap[{j},{i}]', fam)
            model.add_linear([(layout.R[j, i], 1.0), (layout.F[j], float(K))], '<=', float(K),
                             f'rflow_movable[{j},{i}]', fam)
    for i in range(1, K):
        terms = [(layout.R[j, i], 1.0) for j in range(i)]
        terms += [(layout.R[i, k], -1.0) for k in range(i + 1, K)]
        terms += [(layout.F[i], 1.0)]
        model.add_linear(terms, '=', 1.0, f'rflow_balance[{i}]', fam)


def add_distance_definitions(model, layout, spec) -> None:
    """Big-M definitions of the parent offsets; the motor uses its crank vector."""
    K, T, B = spec.K, spec.T, spec.B
    M = big_m(spec)['dist']
    fam = 'distance'
    for k in range(2):
        for i in range(K):
            for d in range(T):
                layout.dx[k, i, d] = model.add_var(f'dx[{k + 1},{i},{d}]', -B, B)
                layout.dy[k, i, d] = model.add_var(f'dy[{k + 1},{i},{d}]', -B, B)
    for k in range(2):
        sel = layout.connect_vars(k)
        for i in range(1, K):
            for j in range(i):
                for d in range(T):
                    for axis, dv, pos in (('x', layout.dx, layout.x), ('y', layout.dy, layout.y)):
                        base = [(dv[k, i, d], 1.0), (pos[j, d], -1.0), (pos[i, d], 1.0)]
                        model.add_linear(base + [(sel[j, i], M)], '<=', M,
                                         f'dist+[{k + 1},{axis},{j},{i},{d}]', fam)
                        model.add_linear([(v, -c) for v, c in base] + [(sel[j, i], M)], '<=', M,
                                         f'dist-[{k + 1},{axis},{j},{i},{d}]', fam)
    for k in range(2):
        for d in range(T):
            model.add_linear([(layout.dx[k, 0, d], 1.0), (layout.x[0, d], -1.0),
                              (layout.XC, 1.0)], '=', 0.0, f'motor_dx[{k + 1},{d}]', fam)
            model.add_linear([(layout.dy[k, 0, d], 1.0), (layout.y[0, d], -1.0),
                              (layout.YC, 1.0)], '=', 0.0, f'motor_dy[{k + 1},{d}]', fam)


def add_pwl_square(model: MicpModel, grid: PwlGrid, var: int, label: str):
    """Chord upper bound of ``var**2`` over the breakpoint grid.

    Returns ``(tilde_index, lambda_indices)``.
    """
    alpha = grid.breakpoints
    lams = [model.add_var(f'lam_{label}[{s}]', 0, 1) for s in range(grid.S)]
    tilde = model.add_var(f't{label}', 0, grid.B ** 2)
    fam = 'pwl'
    model.add_linear([(l, 1.0) for l in lams], '=', 1.0, f'pwl_sum_{label}', fam)
    model.add_linear([(l, float(a)) for l, a in zip(lams, alpha)] + [(var, -1.0)], '=', 0.0,
                     f'pwl_val_{label}', fam)
    model.add_linear([(l, float(a * a)) for l, a in zip(lams, alpha)] + [(tilde, -1.0)], '=', 0.0,
                     f'pwl_sq_{label}', fam)
    model.add_sos(2, lams, f'pwl_{label}', 'pwl')
    return tilde, lams


def add_pwl_bounds(model, layout, spec) -> None:
    grid = PwlGrid(spec.B, spec.S)
    for k in range(2):
        for i in range(spec.K):
            for d in range(spec.T):
                for axis, dv, tv, lv in (('x', layout.dx, layout.tdx, layout.lam_dx),
                                         ('y', layout.dy, layout.tdy, layout.lam_dy)):
                    tilde, lams = add_pwl_square(model, grid, int(dv[k, i, d]),
                                                 f'd{axis}[{k + 1},{i},{d}]')
                    if i > 0:
                        layout.guards[len(model.sos_sets) - 1] = int(layout.F[i])
                    tv[k, i, d] = tilde
                    lv[k, i, d, :] = lams


def add_equidistant_constraints(model, layout, spec) -> None:
    K, T = spec.K, spec.T
    M = big_m(spec)['sq']
    for i in range(K):
        for d in range(T):
            e = (d + 1) % T
            rows = [AffineRow(((layout.x[i, d], 1.0), (layout.x[i, e], -1.0))),
                    AffineRow(((layout.y[i, d], 1.0), (layout.y[i, e], -1.0)))]
            model.add_quad(rows, [(layout.F[i], -M)], M, f'immobile[{i},{d}]', 'immobility')
    for k in range(2):
        for i in range(K):
            for d in range(T):
                e = (d + 1) % T
                for a, b, tag in ((e, d, 'fwd'), (d, e, 'bwd')):
                    rows = [AffineRow(((layout.dx[k, i, a], 1.0),)),
                            AffineRow(((layout.dy[k, i, a], 1.0),))]
                    rhs = [(layout.tdx[k, i, b], 1.0), (layout.tdy[k, i, b], 1.0),
                           (layout.F[i], M)]
                    model.add_quad(rows, rhs, 0.0, f'equidist_{tag}[{k + 1},{i},{d}]',
                                   'equidistance')


def add_min_length_constraints(model, layout, spec) -> None:
    M = big_m(spec)['sq']
    l2 = spec.l_min ** 2
    for k in range(2):
        for i in range(spec.K):
            for d in range(spec.T):
                model.add_linear([(layout.tdx[k, i, d], 1.0), (layout.tdy[k, i, d], 1.0),
                                  (layout.F[i], M + l2)], '>=', l2,
                                 f'min_len[{k + 1},{i},{d}]', 'min_length')


def add_sector_constraints(model, layout, spec) -> None:
    table = SectorTable(spec.S, spec.epsilon)
    M = big_m(spec)['sector']
    vl, vr, vle, vrp = table.left, table.right, table.left_eps, table.right_pi
    fam = 'sector'
    for i in range(1, spec.K):
        for d in range(spec.T):
            for l in range(table.count):
                layout.gamma[i, d, l] = model.add_var(f'gamma[{i},{d},{l}]', 0, 1)
            d1 = (layout.dx[0, i, d], layout.dy[0, i, d])
            d2 = (layout.dx[1, i, d], layout.dy[1, i, d])
            F = layout.F[i]
            for l in range(table.count):
                g = layout.gamma[i, d, l]
                tag = f'[{i},{d},{l}]'
                model.add_linear([(d1[0], vl[l, 0]), (d1[1], vl[l, 1]), (g, -M), (F, M)],
                                 '>=', -M, 'sec_left' + tag, fam)
                model.add_linear([(d1[0], vr[l, 0]), (d1[1], vr[l, 1]), (g, M), (F, -M)],
                                 '<=', M, 'sec_right' + tag, fam)
                model.add_linear([(d2[0], vle[l, 0]), (d2[1], vle[l, 1]), (g, M), (F, -M)],
                                 '<=', M, 'sec_left_eps' + tag, fam)
                model.add_linear([(d2[0], vrp[l, 0]), (d2[1], vrp[l, 1]), (g, -M), (F, M)],
                                 '>=', -M, 'sec_right_pi' + tag, fam)
            members = layout.gamma[i, d, :]
            model.add_linear([(g, 1.0) for g in members], '=', 1.0, f'sec_sum[{i},{d}]', fam)
            model.add_sos(1, members, f'sector[{i},{d}]', 'sector')
            layout.guards[len(model.sos_sets) - 1] = int(F)


def add_rotation_constraints(model, layout, spec) -> None:
    """Consecutive crank vectors differ by a rotation of ``+-2*pi/T``.

    ``D = 0`` forces counter-clockwise steps, ``D = 1`` clockwise ones.
    """
    T = spec.T
    M = big_m(spec)['sq']
    for d in range(T - 1):
        for sign, rhs_terms, rhs_const, tag in ((1.0, [(layout.D, M)], 0.0, 'ccw'),
                                                (-1.0, [(layout.D, -M)], M, 'cw')):
            th = sign * 2 * math.pi / T
            c, s = math.cos(th), math.sin(th)
            ux, uy = layout.dx[0, 0, d], layout.dy[0, 0, d]
            vx, vy = layout.dx[0, 0, d + 1], layout.dy[0, 0, d + 1]
            rows = [AffineRow(((ux, c), (uy, -s), (vx, -1.0))),
                    AffineRow(((ux, s), (uy, c), (vy, -1.0)))]
            model.add_quad(rows, rhs_terms, rhs_const, f'rotation_{tag}[{d}]', 'rotation')


def set_objective(model, layout, spec) -> None:
    tgt = spec.target_array
    end = spec.K - 1
    squares = []
    for d in range(spec.T):
        squares.append(AffineRow(((layout.x[end, d], 1.0),), -float(tgt[d, 0])))
        squares.append(AffineRow(((layout.y[end, d], 1.0),), -float(tgt[d, 1])))
    model.set_objective(squares, [(layout.U[i], spec.w) for i in range(spec.K)], 0.0)


def add_user_constraints(model, layout, spec) -> None:
    uc = spec.user_constraints
    if uc.motor_center is not None:
        model.fix(layout.XC, uc.motor_center[0])
        model.fix(layout.YC, uc.motor_center[1])
    for i, (px, py) in uc.fixed_nodes:
        model.fix(layout.U[i], 1.0)
        model.fix(layout.F[i], 1.0)
        for d in range(spec.T):
            model.fix(layout.x[i, d], px)
            model.fix(layout.y[i, d], py)
    if uc.containment_polygon is not None:
        poly = uc.containment_polygon
        for i in range(spec.K - 1):
            for d in range(spec.T):
                for a in range(len(poly)):
                    (px, py), (qx, qy) = poly[a], poly[(a + 1) % len(poly)]
                    ex, ey = qx - px, qy - py
                    model.add_linear([(layout.x[i, d], -ey), (layout.y[i, d], ex)], '>=',
                                     ex * py - ey * px, f'contain[{i},{d},{a}]', 'user')


def build_model(spec: ProblemSpec) -> tuple[MicpModel, VariableLayout]:
    """Assemble the full mixed-integer convex program for ``spec``."""
    spec.validate()
    if spec.T < 3:
        raise SpecError('T must be >= 3 to tell rotation directions apart')
    model = MicpModel()
    layout = VariableLayout.empty(spec.K, spec.T, spec.S)
    declare_positions(model, layout, spec)
    add_state_constraints(model, layout, spec)
    add_connectivity_constraints(model, layout, spec)
    add_flow_constraints(model, layout, spec)
    add_reverse_flow_constraints(model, layout, spec)
    add_distance_definitions(model, layout, spec)
    add_pwl_bounds(model, layout, spec)
    add_equidistant_constraints(model, layout, spec)
    add_min_length_constraints(model, layout, spec)
    add_sector_constraints(model, layout, spec)
    add_rotation_constraints(model, layout, spec)
    set_objective(model, layout, spec)
    add_user_constraints(model, layout, spec)
    return model, layout


def expected_counts(K: int, S: int, T: int) -> dict[str, int]:
    """Closed-form sizes of the model built without user constraints."""
    P = K * (K - 1) // 2
    nd = 4 * K * T
    return {
        'variables': 2 * K + 3 + 2 * K * T + 3 * P + 2 * (K - 1) + 2 * P + nd
        + nd * (S + 1) + (K - 1) * T * 2 * S,
        'binaries': 2 * K + 1,
        'linear': K + (3 * P + (K - 1) + 2 * (K - 1)) + (P + K - 1) + (2 * P + K - 1)
        + (8 * P * T + 4 * T) + 3 * nd + 2 * K * T + (K - 1) * T * (8 * S + 1),
        'quad': K * T + 4 * K * T + 2 * (T - 1),
        'sos1': 2 * (K - 1) + (K - 1) * T,
        'sos2': nd,
    }
