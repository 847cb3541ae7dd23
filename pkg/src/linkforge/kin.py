"""Exact forward kinematics, design verification and tracking error."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import LinkageDesign, ProblemSpec, Trajectory

GLITCH_TOL = 1e-9


class KinematicsError(RuntimeError):
    def __init__(self, message: str, angle: float | None = None, node: int | None = None):
        super().__init__(message)
        self.angle = angle
        self.node = node


class MechanismGlitch(KinematicsError):
    pass


class SingularConfiguration(KinematicsError):
    pass


@dataclass(frozen=True, eq=False)
class KinematicState:
    t: float
    positions: np.ndarray
    branch_sign: np.ndarray


def motor_angle(design: LinkageDesign, t):
    sign = 1.0 if design.direction == 1 else -1.0
    return design.motor.phase + sign * np.asarray(t, dtype=float)


def motor_position(design: LinkageDesign, t: float) -> tuple[float, float]:
    """Crank tip at motor time ``t``: ``(R sin a + X_C, R cos a + Y_C)``."""
    a = motor_angle(design, t)
    cx, cy = design.motor.center
    r = design.motor.radius
    return (float(math.sin(a) * r + cx), float(math.cos(a) * r + cy))


def _solve(design: LinkageDesign, ts: np.ndarray, singular_tol: float):
    """Positions for all angles in ``ts``; shape ``(len(ts), K, 2)``.

    Unused nodes are left as NaN.  Raises on the first failing angle.
    """
    topo = design.topology
    n = len(ts)
    pos = np.full((n, design.K, 2), np.nan)
    cross_sign = np.zeros((n, design.K))
    a = motor_angle(design, ts)
    r = design.motor.radius
    pos[:, 0, 0] = np.sin(a) * r + design.motor.center[0]
    pos[:, 0, 1] = np.cos(a) * r + design.motor.center[1]
    for i in range(1, design.K):
        if not topo.used[i]:
            continue
        if topo.fixed[i]:
            pos[:, i, :] = design.fixed_positions[i]
            continue
        j1, j2 = topo.parents[i]
        L1, L2 = design.rod_lengths[i]
        p1, p2 = pos[:, j1, :], pos[:, j2, :]
        dv = p2 - p1
        dist = np.hypot(dv[:, 0], dv[:, 1])
        bad = (dist < abs(L1 - L2) + GLITCH_TOL) | (dist > L1 + L2 - GLITCH_TOL) | ~np.isfinite(dist)
        if bad.any():
            k = int(np.argmax(bad))
            raise MechanismGlitch(f'mechanism glitch at angle {ts[k]:.6g} (node {i})',
                                  float(ts[k]), i)
        along = (L1 * L1 - L2 * L2 + dist * dist) / (2 * dist)
        h = np.sqrt(np.maximum(L1 * L1 - along * along, 0.0))
        e = dv / dist[:, None]
        perp = np.stack([-e[:, 1], e[:, 0]], axis=1)
        node = p1 + along[:, None] * e + h[:, None] * perp
        cross = h * dist
        sing = cross < singular_tol * L1 * L2
        if sing.any():
            k = int(np.argmax(sing))
            raise SingularConfiguration(
                f'singular configuration at angle {ts[k]:.6g} (node {i})', float(ts[k]), i)
        pos[:, i, :] = node
        cross_sign[:, i] = 1.0
    return pos, cross_sign


def propagate(design: LinkageDesign, t: float, singular_tol: float = 1e-9) -> KinematicState:
    """Place every node at motor time ``t`` in index order.

    Movable nodes take the circle-circle intersection on which
    ``cross(parent1 - node, parent2 - node) > 0``.
    """
    pos, sign = _solve(design, np.array([float(t)]), singular_tol)
    return KinematicState(float(t), pos[0], sign[0])


def sample_angles(T: int) -> np.ndarray:
    return 2 * np.pi * np.arange(1, T + 1) / T


def simulate_cycle(design: LinkageDesign, T_samples: int,
                   singular_tol: float = 1e-9) -> Trajectory:
    pos, _ = _solve(design, sample_angles(T_samples), singular_tol)
    return Trajectory(pos)


def rod_vectors(design: LinkageDesign, positions: np.ndarray):
    """Yield ``(node, d1, d2)`` with ``d_k = parent_k - node`` over all samples."""
    topo = design.topology
    for i in range(1, design.K):
        if topo.movable(i):
            j1, j2 = topo.parents[i]
            yield i, positions[:, j1] - positions[:, i], positions[:, j2] - positions[:, i]


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


@dataclass
class VerifyReport:
    equidistance_residual: float = 0.0
    length_residual: float = 0.0
    min_separation: float = math.pi / 2
    min_rod_length: float = math.inf
    containment_violation: float = 0.0
    bound_violation: float = 0.0
    failures: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict:
        return {
            'passed': self.passed,
            'equidistance_residual': self.equidistance_residual,
            'length_residual': self.length_residual,
            'min_separation': self.min_separation,
            'min_rod_length': self.min_rod_length,
            'containment_violation': self.containment_violation,
            'bound_violation': self.bound_violation,
            'failures': list(self.failures),
            'error': self.error,
        }


def verify_design(design: LinkageDesign, spec: ProblemSpec, traj: Trajectory | None = None,
                  residual_tol: float = 1e-8) -> VerifyReport:
    """Check a design against the exact constraints at ``spec.T`` samples.

    Without ``traj`` the design is simulated, so equidistance holds by
    construction and only glitches, singularities, short rods and region
    violations can fail.  With ``traj`` (e.g. raw MICP positions) the given
    poses are measured instead.  ``equidistance_residual`` is the worst
    change of a squared rod length between consecutive samples.
    """
    rep = VerifyReport()
    if traj is None:
        try:
            traj = simulate_cycle(design, spec.T, singular_tol=0.0)
        except KinematicsError as exc:
            rep.error = str(exc)
            rep.failures.append('simulation: ' + str(exc))
            return rep
    P = traj.positions
    topo = design.topology
    used = [i for i in range(design.K) if topo.used[i]]

    # motor circle and fixed nodes count as rods too
    center = np.asarray(design.motor.center)
    sq = [np.sum((P[:, 0] - center) ** 2, axis=1)]
    lengths = [(sq[0], design.motor.radius)]
    for i in used[1:]:
        if topo.fixed[i]:
            drift = np.max(np.abs(P[:, i] - P[0, i]))
            rep.equidistance_residual = max(rep.equidistance_residual, float(drift))
    min_sep = math.pi / 2
    for i, d1, d2 in rod_vectors(design, P):
        s1, s2 = np.sum(d1 * d1, axis=1), np.sum(d2 * d2, axis=1)
        L1, L2 = design.rod_lengths[i]
        sq += [s1, s2]
        lengths += [(s1, L1), (s2, L2)]
        n1, n2 = np.sqrt(s1), np.sqrt(s2)
        with np.errstate(invalid='ignore', divide='ignore'):
            sin = _cross(d1, d2) / (n1 * n2)
            cos = np.sum(d1 * d2, axis=1) / (n1 * n2)
        ang = np.arctan2(sin, cos)
        # separation from both colinear configurations
        sep = np.where(ang >= 0, np.minimum(ang, np.pi - ang), ang)
        min_sep = min(min_sep, float(np.nanmin(sep)) if np.isfinite(sep).any() else -math.pi)
        rep.min_rod_length = min(rep.min_rod_length, float(np.min(n1)), float(np.min(n2)))
    rep.min_separation = min_sep
    rep.min_rod_length = min(rep.min_rod_length, design.motor.radius)
    for s in sq:
        rep.equidistance_residual = max(
            rep.equidistance_residual, float(np.max(np.abs(s - np.roll(s, -1)))))
    for s, L in lengths:
        rep.length_residual = max(rep.length_residual, float(np.max(np.abs(np.sqrt(s) - L))))

    B = spec.B
    rep.bound_violation = max(0.0, float(np.max(np.abs(P[:, used])) - B))
    poly = spec.user_constraints.containment_polygon
    if poly is not None:
        rep.containment_violation = containment_violation(P[:, [i for i in used[:-1]]], poly)

    if rep.equidistance_residual > residual_tol:
        rep.failures.append(f'equidistance residual {rep.equidistance_residual:.3g} > {residual_tol:.3g}')
    if rep.min_separation < spec.epsilon - 1e-12:
        rep.failures.append(f'angular separation {rep.min_separation:.4g} < epsilon {spec.epsilon:.4g}')
    if rep.min_rod_length < spec.l_min - 1e-12:
        rep.failures.append(f'rod length {rep.min_rod_length:.4g} < l_min {spec.l_min:.4g}')
    if rep.bound_violation > 1e-9:
        rep.failures.append(f'node leaves workspace by {rep.bound_violation:.3g}')
    if rep.containment_violation > 1e-9:
        rep.failures.append(f'containment violated by {rep.containment_violation:.3g}')
    return rep


def containment_violation(points: np.ndarray, polygon) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = np.asarray(polygon, dtype=float)
    worst = 0.0
    for a in range(len(poly)):
        p, q = poly[a], poly[(a + 1) % len(poly)]
        edge = q - p
        norm = math.hypot(edge[0], edge[1])
        side = (edge[0] * (pts[:, 1] - p[1]) - edge[1] * (pts[:, 0] - p[0])) / norm
        worst = max(worst, float(np.max(-side, initial=0.0)))
    return worst


def trajectory_error(traj: Trajectory | np.ndarray, target, w: float = 0.0, used_count: int = 0,
                     align: bool = False) -> float:
    """Squared tracking error of the end-effector plus ``w * used_count``.

    With ``align`` the best value over cyclic shifts and both traversal
    directions of the sampled curve is returned.
    """
    ee = traj.end_effector if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    tgt = np.asarray(target, dtype=float)
    if ee.shape != tgt.shape:
        raise ValueError(f'trajectory has {len(ee)} samples, target has {len(tgt)}')
    if not align:
        return float(np.sum((ee - tgt) ** 2)) + w * used_count
    T = len(ee)
    # row s holds the sample indices of np.roll(ee, s)
    idx = (np.arange(T)[None, :] - np.arange(T)[:, None]) % T
    shifted = np.concatenate([ee[idx], ee[::-1][idx]])
    return float(np.min(np.sum((shifted - tgt) ** 2, axis=(1, 2)))) + w * used_count
