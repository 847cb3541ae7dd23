"""Local refinement with the topology fixed.

The MICP trajectory only satisfies the rod constraints up to the PWL
approximation.  Here the binaries are frozen and the remaining continuous
problem is solved exactly: minimise the squared tracking error subject to
constant rod lengths, a rigid motor crank and immobile fixed nodes, with the
angle, length, workspace and containment inequalities.

Method: augmented Lagrangian (PHR form for the inequalities).  Every inner
subproblem is a nonlinear least-squares problem, solved by damped
Gauss-Newton with a backtracking line search on the merit.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .core import LinkageDesign, Motor, ProblemSpec, Trajectory

log = logging.getLogger(__name__)

EQ_TOL = 1e-8
STAT_TOL = 1e-6
MAX_OUTER = 50
MAX_INNER = 200
RHO_MAX = 1e8
# inequalities are solved with this much slack so the result passes exact checks
MARGIN = 1e-8


@dataclass
class RefineProblem:
    design: LinkageDesign            # compact, all nodes used
    target: np.ndarray               # (T, 2)
    T: int
    B: float
    l_min: float
    epsilon: float
    polygon: np.ndarray | None = None
    pins: dict = field(default_factory=dict)     # decision index -> required value
    margin: float = MARGIN
    # also keep every rod and crank offset inside the box a discretised model spans
    offset_bound: bool = False

    def __post_init__(self):
        topo = self.design.topology
        if not all(topo.used):
            raise ValueError('refine expects a compact design (call design.compact())')
        self.n = topo.K
        self.rods = [(i, j) for i in range(1, self.n) if topo.movable(i)
                     for j in topo.parents[i]]
        self.triangles = [(i, *topo.parents[i]) for i in range(1, self.n) if topo.movable(i)]
        self.rod_index = np.array(self.rods, dtype=int).reshape(-1, 2)
        self.tri_index = np.array(self.triangles, dtype=int).reshape(-1, 3)
        self.fixed = [i for i in range(1, self.n) if topo.fixed[i]]
        self.size = 2 * self.n * self.T + 2
        self.colidx = np.arange(self.size - 2).reshape(self.T, self.n, 2)
        sign = -1.0 if topo.direction == 1 else 1.0
        th = sign * 2 * math.pi / self.T
        self.rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])

    # decision vector layout: positions (T, n, 2) row-major, then motor center
    def pos(self, x) -> np.ndarray:
        return x[:-2].reshape(self.T, self.n, 2)

    def col(self, d, i, c) -> int:
        return (d * self.n + i) * 2 + c

    def pack(self, positions, center) -> np.ndarray:
        return np.concatenate([np.asarray(positions, float).ravel(), np.asarray(center, float)])


class _Blocks:
    """Residual rows with a fixed number of Jacobian entries per block."""

    def __init__(self, size: int, jac: bool = True):
        self.size, self.jac = size, jac
        self.values: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.data: list[np.ndarray] = []

    def add(self, values, pattern) -> None:
        """``pattern()`` gives (columns, derivatives); only called when a Jacobian is wanted."""
        values = np.asarray(values, dtype=float)
        self.values.append(values.ravel())
        if self.jac:
            cols, data = pattern()
            k = np.shape(cols)[-1]
            self.cols.append(np.broadcast_to(cols, values.shape + (k,)).reshape(-1, k))
            self.data.append(np.broadcast_to(data, values.shape + (k,)).reshape(-1, k))

    def result(self):
        v = np.concatenate(self.values) if self.values else np.zeros(0)
        if not self.jac:
            return v, None
        counts = np.concatenate([np.full(len(c), c.shape[1]) for c in self.cols])
        indptr = np.concatenate([[0], np.cumsum(counts)])
        J = sparse.csr_matrix((np.concatenate([d.ravel() for d in self.data]),
                               np.concatenate([c.ravel() for c in self.cols]), indptr),
                              shape=(len(v), self.size))
        J.sum_duplicates()
        return v, J


def _cols(p: 'RefineProblem', d, i) -> np.ndarray:
    """Column pair (x, y) of node ``i`` at sample ``d``; broadcasts, trailing axis 2."""
    return p.colidx[d, i]


def residuals_and_jacobian(problem: RefineProblem, x, jac: bool = True
                           ) -> tuple[np.ndarray, sparse.csr_matrix | None]:
    """Equality residuals ``h(x)`` and their sparse Jacobian (``None`` unless ``jac``)."""
    p = problem
    P = p.pos(x)
    C = x[-2:]
    out = _Blocks(p.size, jac)
    d = np.arange(p.T)
    e = (d + 1) % p.T
    if p.rods:
        ri, rj = p.rod_index[:, 0][:, None], p.rod_index[:, 1][:, None]
        a = P[d, rj] - P[d, ri]                    # (rods, T, 2)
        b = P[e, rj] - P[e, ri]
        out.add(np.sum(a * a - b * b, axis=-1), lambda: (
            np.concatenate([_cols(p, d, rj), _cols(p, d, ri), _cols(p, e, rj), _cols(p, e, ri)], -1),
            np.concatenate([2 * a, -2 * a, -2 * b, 2 * b], -1)))
    R = p.rot
    dd = d[:-1]
    v = (P[dd, 0] - C) @ R.T - (P[dd + 1, 0] - C)  # (T-1, 2)
    out.add(v, lambda: (
        np.concatenate([np.repeat(_cols(p, dd, 0)[:, None, :], 2, axis=1),
                        _cols(p, dd + 1, 0)[:, :, None],
                        np.broadcast_to([p.size - 2, p.size - 1], (len(dd), 2, 2))], -1),
        np.concatenate([np.broadcast_to(R, (len(dd), 2, 2)), -np.ones((len(dd), 2, 1)),
                        np.broadcast_to(np.eye(2) - R, (len(dd), 2, 2))], -1)))
    for i in p.fixed:
        out.add(P[dd, i] - P[dd + 1, i], lambda: (
            np.stack([_cols(p, dd, i), _cols(p, dd + 1, i)], -1), np.array([1.0, -1.0])))
    if p.pins:
        keys = np.array(sorted(p.pins))
        vals = np.array([p.pins[k] for k in keys])
        out.add(x[keys] - vals, lambda: (keys[:, None], np.ones((len(keys), 1))))
    return out.result()


def inequalities_and_jacobian(problem: RefineProblem, x, jac: bool = True
                              ) -> tuple[np.ndarray, sparse.csr_matrix | None]:
    """Inequality residuals ``g(x) >= 0`` and their Jacobian."""
    p = problem
    P = p.pos(x)
    C = x[-2:]
    out = _Blocks(p.size, jac)
    d = np.arange(p.T)
    s_eps = math.sin(p.epsilon + p.margin)
    if p.triangles:
        ti, t1, t2 = (p.tri_index[:, k][:, None] for k in range(3))
        a = P[d, t1] - P[d, ti]                    # (tri, T, 2)
        b = P[d, t2] - P[d, ti]
        na = np.hypot(a[..., 0], a[..., 1])[..., None]
        nb = np.hypot(b[..., 0], b[..., 1])[..., None]
        cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]

        def angle_pattern():
            ga = np.stack([b[..., 1], -b[..., 0]], -1) - s_eps * nb * a / np.maximum(na, 1e-300)
            gb = np.stack([-a[..., 1], a[..., 0]], -1) - s_eps * na * b / np.maximum(nb, 1e-300)
            return (np.concatenate([_cols(p, d, t1), _cols(p, d, t2), _cols(p, d, ti)], -1),
                    np.concatenate([ga, gb, -ga - gb], -1))
        out.add(cross - s_eps * (na * nb)[..., 0], angle_pattern)
    l2 = (p.l_min + p.margin) ** 2
    if p.rods:
        ri, rj = p.rod_index[:, 0][:, None], p.rod_index[:, 1][:, None]
        a = P[d, rj] - P[d, ri]
        out.add(np.sum(a * a, axis=-1) - l2, lambda: (
            np.concatenate([_cols(p, d, rj), _cols(p, d, ri)], -1),
            np.concatenate([2 * a, -2 * a], -1)))
    crank = P[:, 0] - C
    center_cols = np.broadcast_to([p.size - 2, p.size - 1], (p.T, 2))
    out.add(np.sum(crank * crank, axis=-1) - l2, lambda: (
        np.concatenate([_cols(p, d, 0), center_cols], -1),
        np.concatenate([2 * crank, -2 * crank], -1)))
    k = np.arange(p.size)
    box = np.stack([p.B - p.margin - x, p.B - p.margin + x], -1)
    out.add(box, lambda: (np.stack([k, k], -1)[..., None],
                          np.broadcast_to([[-1.0], [1.0]], (p.size, 2, 1))))
    if p.offset_bound:
        sg = np.array([1.0, -1.0])
        if p.rods:
            a = P[d, rj] - P[d, ri]                # (rods, T, 2)
            out.add(p.B - p.margin - a[..., None] * sg, lambda: (
                np.broadcast_to(np.stack([_cols(p, d, rj), _cols(p, d, ri)], -1)[..., None, :],
                                a.shape + (2, 2)),
                np.stack([-sg, sg], -1)))
        out.add(p.B - p.margin - crank[..., None] * sg, lambda: (
            np.broadcast_to(np.stack([_cols(p, d, 0), center_cols], -1)[..., None, :],
                            crank.shape + (2, 2)),
            np.stack([-sg, sg], -1)))
    if p.polygon is not None:
        q0 = p.polygon
        edge = np.roll(q0, -1, axis=0) - q0
        ne = np.hypot(edge[:, 0], edge[:, 1])
        Q = P[:, :p.n - 1].transpose(1, 0, 2)       # (n-1, T, 2)
        val = (edge[:, 0] * (Q[..., None, 1] - q0[:, 1]) - edge[:, 1] * (Q[..., None, 0] - q0[:, 0])) / ne
        out.add(val - p.margin, lambda: (
            np.broadcast_to(_cols(p, d[None, :, None], np.arange(p.n - 1)[:, None, None]),
                            val.shape + (2,)),
            np.stack([-edge[:, 1] / ne, edge[:, 0] / ne], -1)))
    return out.result()


def _objective_residual(p: RefineProblem, x) -> tuple[np.ndarray, sparse.csr_matrix]:
    P = p.pos(x)
    r = (P[:, -1, :] - p.target).ravel()
    cols = [p.col(d, p.n - 1, c) for d in range(p.T) for c in range(2)]
    J = sparse.csr_matrix((np.ones(len(cols)), (np.arange(len(cols)), cols)),
                          shape=(len(cols), p.size))
    return r, J


@dataclass
class RefineReport:
    success: bool
    objective_before: float
    objective_after: float
    eq_residual_before: float
    eq_residual_after: float
    ineq_violation_after: float
    stationarity: float
    outer_iterations: int
    inner_iterations: int
    merit_history: list = field(default_factory=list)   # one list per outer iteration
    message: str = ''

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop('merit_history')
        return d


def _inner(p, x, lam, mu, rho, max_iter, history):
    sr = math.sqrt(rho)

    def build(x, need_jac=True):
        ro = (p.pos(x)[:, -1, :] - p.target).ravel()
        h, Jh = residuals_and_jacobian(p, x, need_jac)
        g, Jg = inequalities_and_jacobian(p, x, need_jac)
        shifted = mu / rho - g
        active = shifted > 0
        R = np.concatenate([math.sqrt(2) * ro, sr * (h + lam / rho), sr * np.where(active, shifted, 0.0)])
        if not need_jac:
            return R, None
        _, Jo = _objective_residual(p, x)
        Ja = Jg.multiply(active[:, None]) if active.any() else sparse.csr_matrix(Jg.shape)
        J = sparse.vstack([math.sqrt(2) * Jo, sr * Jh, -sr * sparse.csr_matrix(Ja)]).toarray()
        return R, J

    R, J = build(x)
    merit = 0.5 * float(R @ R)
    history.append(merit)
    damping = 1e-6
    it = 0
    for it in range(1, max_iter + 1):
        grad = J.T @ R
        if np.max(np.abs(grad)) <= 1e-13 * max(1.0, rho):
            break
        A = J.T @ J
        diag = np.diag(A).copy()
        step = None
        while damping < 1e12:
            try:
                step = np.linalg.solve(A + damping * (np.diag(diag) + np.eye(len(x)) * 1e-12), -grad)
            except np.linalg.LinAlgError:
                damping *= 10
                continue
            break
        if step is None:
            break
        # backtracking on the merit along the damped Gauss-Newton direction
        slope = float(grad @ step)
        t = 1.0
        accepted = False
        while t > 1e-10:
            xn = x + t * step
            Rn, _ = build(xn, need_jac=False)
            mn = 0.5 * float(Rn @ Rn)
            if mn <= merit + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            damping = min(damping * 10, 1e10)
            if damping >= 1e10:
                break
            continue
        rel = (merit - mn) / max(merit, 1e-300)
        x = xn
        merit = mn
        history.append(merit)
        damping = max(damping / 3 if t == 1.0 else damping * 2, 1e-12)
        R, J = build(x)
        if rel < 1e-15:
            break
    return x, it


def _max_violation(p, x) -> tuple[float, float]:
    h, _ = residuals_and_jacobian(p, x, False)
    g, _ = inequalities_and_jacobian(p, x, False)
    return (float(np.max(np.abs(h), initial=0.0)), float(np.max(-g, initial=0.0)))


def _stationarity(p, x, lam, mu) -> float:
    ro, Jo = _objective_residual(p, x)
    _, Jh = residuals_and_jacobian(p, x)
    _, Jg = inequalities_and_jacobian(p, x)
    grad = 2 * (Jo.T @ ro) + Jh.T @ lam - Jg.T @ mu
    return float(np.max(np.abs(grad)))


def problem_from(design: LinkageDesign, spec: ProblemSpec,
                 keep: tuple[int, ...] | None = None,
                 epsilon: float | None = None, offset_bound: bool = False) -> RefineProblem:
    """``keep`` maps compact node indices back to model slots for user pins.

    ``epsilon`` overrides the minimum parent angle (e.g. to stay inside the
    angles a discretised model can represent).
    """
    uc = spec.user_constraints
    poly = uc.containment_polygon
    n = design.K
    keep = tuple(range(n - 1)) + (spec.K - 1,) if keep is None else keep
    pins = {}
    size = 2 * n * spec.T + 2
    if uc.motor_center is not None:
        pins[size - 2], pins[size - 1] = uc.motor_center
    slot = {old: new for new, old in enumerate(keep)}
    for idx, (px, py) in uc.fixed_nodes:
        if idx in slot:
            i = slot[idx]
            for d in range(spec.T):
                pins[(d * n + i) * 2] = px
                pins[(d * n + i) * 2 + 1] = py
    eps = spec.epsilon if epsilon is None else max(epsilon, spec.epsilon)
    return RefineProblem(design, spec.target_array, spec.T, spec.B, spec.l_min, eps,
                         None if poly is None else np.asarray(poly, dtype=float), pins,
                         offset_bound=offset_bound)


def design_from(p: RefineProblem, x) -> LinkageDesign:
    """Rebuild a design whose exact kinematics reproduce the positions in ``x``."""
    P = p.pos(x)
    C = x[-2:]
    topo = p.design.topology
    lengths = [None] * p.n
    fixed = [None] * p.n
    for i in range(1, p.n):
        if topo.movable(i):
            lengths[i] = tuple(float(np.mean(np.linalg.norm(P[:, j] - P[:, i], axis=1)))
                               for j in topo.parents[i])
        else:
            fixed[i] = tuple(float(v) for v in P[:, i].mean(axis=0))
    crank = P[:, 0] - C
    radius = float(np.mean(np.linalg.norm(crank, axis=1)))
    s = 1.0 if topo.direction == 1 else -1.0
    phase = math.remainder(math.atan2(crank[0, 0], crank[0, 1]) - s * 2 * math.pi / p.T, 2 * math.pi)
    return LinkageDesign(topo, tuple(lengths), tuple(fixed),
                         Motor((float(C[0]), float(C[1])), radius, phase))


def refine(design: LinkageDesign, traj: Trajectory, spec: ProblemSpec,
           max_outer: int = MAX_OUTER, max_inner: int = MAX_INNER,
           keep: tuple[int, ...] | None = None, epsilon: float | None = None,
           offset_bound: bool = False) -> tuple[LinkageDesign, Trajectory, RefineReport]:
    """Exact-constraint polish of a design and its sampled poses.

    ``keep`` lists the model slot of every node when the design came out of
    a larger model; it is only needed to honour user-fixed node positions.
    """
    design, kept = design.compact()
    positions = traj.positions
    if positions.shape[1] != len(kept):
        if positions.shape[1] <= max(kept):
            raise ValueError(f'trajectory has {positions.shape[1]} nodes, design needs {len(kept)}')
        positions = positions[:, list(kept)]
    p = problem_from(design, spec, keep, epsilon, offset_bound)
    x = p.pack(positions, design.motor.center)
    ro, _ = _objective_residual(p, x)
    obj0 = float(ro @ ro)
    eq0, _ = _max_violation(p, x)
    h, _ = residuals_and_jacobian(p, x)
    g, _ = inequalities_and_jacobian(p, x)
    lam = np.zeros(len(h))
    mu = np.zeros(len(g))
    rho = 10.0
    history: list = []
    inner_total = 0
    prev = math.inf
    success = False
    stat = math.inf
    outer = 0
    for outer in range(1, max_outer + 1):
        hist: list = []
        x, its = _inner(p, x, lam, mu, rho, max_inner, hist)
        history.append(hist)
        inner_total += its
        h, _ = residuals_and_jacobian(p, x)
        g, _ = inequalities_and_jacobian(p, x)
        lam = lam + rho * h
        mu = np.maximum(0.0, mu - rho * g)
        eq, ineq = _max_violation(p, x)
        viol = max(eq, ineq)
        stat = _stationarity(p, x, lam, mu)
        log.debug('outer %d rho %.1e eq %.3g ineq %.3g stat %.3g', outer, rho, eq, ineq, stat)
        if eq <= EQ_TOL and ineq <= 1e-10 and stat <= STAT_TOL:
            success = True
            break
        if viol > 0.25 * prev:
            rho = min(rho * 10, RHO_MAX)
        prev = viol
    eq, ineq = _max_violation(p, x)
    ro, _ = _objective_residual(p, x)
    new_design = design_from(p, x)
    assert new_design.topology == design.topology
    report = RefineReport(success, obj0, float(ro @ ro), eq0, eq, ineq, stat, outer, inner_total,
                          history, '' if success else 'iteration cap reached before convergence')
    if not success:
        log.info('refinement did not converge: eq %.3g ineq %.3g stat %.3g', eq, ineq, stat)
    return new_design, Trajectory(p.pos(x).copy()), report
