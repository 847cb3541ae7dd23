"""
Domain types for planar-linkage synthesis.

Node indices are zero-based throughout the package: node ``0`` is the motor
(crank tip), node ``K-1`` is the end-effector.  Every movable node ``i >= 1``
hangs off an ordered pair of lower-indexed parents; the order matters because
forward kinematics always picks the intersection branch on which the cross
product of the two parent vectors is positive.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

Point = tuple[float, float]

DEFAULT_B = 1.0
DEFAULT_L_MIN = 0.1
DEFAULT_EPSILON = 0.1
DEFAULT_W = 0.01
MAX_ENUMERATION_K = 6


class SpecError(ValueError):
    """Raised when a ProblemSpec violates its invariants."""


@dataclass(frozen=True)
class UserConstraints:
    """Optional design constraints on top of trajectory tracking.

    ``fixed_nodes`` maps node index to a pinned position.  The containment
    polygon must be convex and counter-clockwise; it applies to every node
    except the end-effector.
    """

    motor_center: Point | None = None
    fixed_nodes: tuple[tuple[int, Point], ...] = ()
    containment_polygon: tuple[Point, ...] | None = None

    def __post_init__(self):
        if self.containment_polygon is not None:
            check_convex_ccw(self.containment_polygon)

    @property
    def empty(self) -> bool:
        return (self.motor_center is None and not self.fixed_nodes
                and self.containment_polygon is None)


def check_convex_ccw(polygon: Sequence[Point]) -> None:
    """Raise SpecError unless ``polygon`` is strictly convex and CCW."""
    n = len(polygon)
    if n < 3:
        raise SpecError('containment polygon needs at least 3 vertices')
    pts = np.asarray(polygon, dtype=float)
    for a in range(n):
        p0, p1, p2 = pts[a], pts[(a + 1) % n], pts[(a + 2) % n]
        turn = (p1[0] - p0[0]) * (p2[1] - p1[1]) - (p1[1] - p0[1]) * (p2[0] - p1[0])
        if turn <= 0.0:
            raise SpecError('containment polygon must be convex and counter-clockwise')


@dataclass(frozen=True)
class ProblemSpec:
    target: tuple[Point, ...]
    K: int = 5
    S: int = 9
    T: int | None = None
    B: float = DEFAULT_B
    l_min: float = DEFAULT_L_MIN
    epsilon: float = DEFAULT_EPSILON
    w: float = DEFAULT_W
    mip_gap: float = 1e-6
    time_limit: float = 3600.0
    seed: int = 0
    user_constraints: UserConstraints = field(default_factory=UserConstraints)

    def __post_init__(self):
        target = tuple((float(x), float(y)) for x, y in self.target)
        object.__setattr__(self, 'target', target)
        if self.T is None:
            object.__setattr__(self, 'T', len(target))
        self.validate()

    def validate(self) -> None:
        if self.K < 3:
            raise SpecError(f'K must be >= 3, got {self.K}')
        if self.S < 3:
            raise SpecError(f'S must be >= 3, got {self.S}')
        if self.T < 3:
            raise SpecError(f'T must be >= 3, got {self.T}')
        if len(self.target) != self.T:
            raise SpecError(f'target has {len(self.target)} points, expected T={self.T}')
        if self.B <= 0:
            raise SpecError('B must be positive')
        for x, y in self.target:
            if abs(x) > self.B or abs(y) > self.B:
                raise SpecError(f'target point ({x}, {y}) outside [-B, B]^2')
        if not 0 < self.l_min < 2 * self.B:
            raise SpecError('l_min must lie in (0, 2B)')
        if not 0 < self.epsilon < math.pi / self.S:
            raise SpecError('epsilon must lie in (0, pi/S)')
        if self.w < 0:
            raise SpecError('w must be non-negative')
        for idx, _ in self.user_constraints.fixed_nodes:
            if not 1 <= idx < self.K - 1:
                raise SpecError(f'fixed node index {idx} must be an interior node')

    @property
    def target_array(self) -> np.ndarray:
        return np.asarray(self.target, dtype=float).reshape(self.T, 2)

    def with_(self, **changes) -> 'ProblemSpec':
        return replace(self, **changes)


@dataclass(frozen=True)
class Normalization:
    """Uniform scale plus shift mapping user coordinates into the workspace."""

    scale: float = 1.0
    offset: Point = (0.0, 0.0)

    def apply(self, pts):
        return (np.asarray(pts, dtype=float) - np.asarray(self.offset)) * self.scale

    def invert(self, pts):
        return np.asarray(pts, dtype=float) / self.scale + np.asarray(self.offset)


def normalize_target(target: Sequence[Point], B: float = DEFAULT_B,
                     fill: float = 0.8) -> Normalization:
    """Transform fitting ``target`` into ``[-fill*B, fill*B]^2``.

    Targets already inside that box are left untouched.
    """
    pts = np.asarray(target, dtype=float)
    if np.all(np.abs(pts) <= fill * B):
        return Normalization()
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2
    extent = float(np.max(hi - lo))
    scale = 2 * fill * B / extent if extent > 0 else 1.0
    return Normalization(scale=scale, offset=(float(center[0]), float(center[1])))


@dataclass(frozen=True)
class Violation:
    kind: str
    node: int
    detail: str = ''

    def __str__(self):
        return f'node {self.node}: {self.kind}' + (f' ({self.detail})' if self.detail else '')


@dataclass(frozen=True)
class Topology:
    """Discrete half of a design.

    Unused nodes carry ``fixed=True``: an unused node cannot be movable.
    ``direction`` is 1 for clockwise motor rotation (the sin/cos
    parameterisation as written) and 0 for counter-clockwise.
    """

    used: tuple[bool, ...]
    fixed: tuple[bool, ...]
    parents: tuple[tuple[int, int] | None, ...]
    direction: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'used', tuple(bool(u) for u in self.used))
        object.__setattr__(self, 'fixed', tuple(bool(f) for f in self.fixed))
        object.__setattr__(self, 'parents', tuple(
            None if p is None else (int(p[0]), int(p[1])) for p in self.parents))

    @property
    def K(self) -> int:
        return len(self.used)

    def movable(self, i: int) -> bool:
        return self.used[i] and not self.fixed[i]

    @property
    def used_count(self) -> int:
        return sum(self.used)

    def sort_key(self):
        return (self.used, self.fixed,
                tuple((-1, -1) if p is None else p for p in self.parents))


def validate_topology(topo: Topology, K: int) -> list[Violation]:
    """All symbolic-correctness violations of ``topo``; empty means valid."""
    out: list[Violation] = []
    if not (len(topo.used) == len(topo.fixed) == len(topo.parents) == K):
        return [Violation('size-mismatch', -1, f'expected {K} entries')]
    used, fixed, parents = topo.used, topo.fixed, topo.parents
    if not used[0]:
        out.append(Violation('motor-unused', 0))
    if not used[K - 1]:
        out.append(Violation('end-effector-unused', K - 1))
    if fixed[0]:
        out.append(Violation('motor-fixed', 0))
    if topo.direction not in (0, 1):
        out.append(Violation('bad-direction', -1, str(topo.direction)))
    if parents[0] is not None:
        out.append(Violation('motor-has-parents', 0))

    children: list[list[int]] = [[] for _ in range(K)]
    for i in range(1, K):
        if not used[i] and not fixed[i]:
            out.append(Violation('unused-movable', i))
        p = parents[i]
        if not topo.movable(i):
            if p is not None:
                out.append(Violation('fixed-has-parents', i))
            continue
        if p is None:
            out.append(Violation('underconnected', i))
            continue
        j1, j2 = p
        if j1 == j2:
            out.append(Violation('duplicate-parents', i, f'({j1}, {j2})'))
            out.append(Violation('underconnected', i))
        for j in dict.fromkeys((j1, j2)):
            if not 0 <= j < i:
                out.append(Violation('parent-not-lower', i, str(j)))
            elif not used[j]:
                out.append(Violation('parent-unused', i, str(j)))
            else:
                children[j].append(i)

    # forward flux: every used node must drain into the end-effector
    reaches = [False] * K
    reaches[K - 1] = True
    for i in range(K - 2, -1, -1):
        reaches[i] = any(reaches[c] for c in children[i])
    for i in range(K - 1):
        if used[i] and not reaches[i]:
            out.append(Violation('cannot-reach-end-effector', i))

    # reverse flux: every movable node must descend to the motor through movable parents
    grounded = [False] * K
    grounded[0] = True
    for i in range(1, K):
        if not topo.movable(i) or parents[i] is None:
            continue
        grounded[i] = any(
            0 <= j < i and not fixed[j] and grounded[j] for j in set(parents[i]))
    for i in range(1, K):
        if topo.movable(i) and parents[i] is not None and not grounded[i]:
            out.append(Violation('no-movable-path-to-motor', i))
    return out


def enumerate_topologies(K: int, force_unused: Iterable[int] = ()) -> list[Topology]:
    """Every valid topology on ``K`` node slots (direction excluded).

    Brute force over node states and ordered parent pairs; intended as a test
    oracle, hence the refusal above ``MAX_ENUMERATION_K``.
    """
    if K > MAX_ENUMERATION_K:
        raise ValueError(f'refusing to enumerate topologies for K={K} > {MAX_ENUMERATION_K}')
    if K < 3:
        raise ValueError('K must be >= 3')
    force_unused = set(force_unused)
    # states: 0 unused, 1 fixed, 2 movable
    interior = [((0,) if i in force_unused else (0, 1, 2)) for i in range(1, K - 1)]
    last = (1, 2)
    found = []
    for states in itertools.product(*interior, last):
        states = (2,) + states
        used = tuple(s > 0 for s in states)
        fixed = tuple(s < 2 for s in states)
        fixed = (False,) + fixed[1:]
        slots = []
        for i in range(K):
            if i == 0 or states[i] != 2:
                slots.append([None])
                continue
            lower = [j for j in range(i) if used[j]]
            slots.append(list(itertools.permutations(lower, 2)))
        for parents in itertools.product(*slots):
            topo = Topology(used, fixed, parents)
            if not validate_topology(topo, K):
                found.append(topo)
    found.sort(key=Topology.sort_key)
    return found


@dataclass(frozen=True)
class Motor:
    """Crank circle.  ``phase`` is the crank angle at ``t = 0``."""

    center: Point
    radius: float
    phase: float = 0.0


@dataclass(frozen=True)
class LinkageDesign:
    topology: Topology
    rod_lengths: tuple[tuple[float, float] | None, ...]
    fixed_positions: tuple[Point | None, ...]
    motor: Motor

    @property
    def K(self) -> int:
        return self.topology.K

    @property
    def direction(self) -> int:
        return self.topology.direction

    def check_invariants(self, l_min: float, B: float) -> list[str]:
        problems = []
        topo = self.topology
        for i in range(1, self.K):
            if topo.movable(i):
                lengths = self.rod_lengths[i]
                if lengths is None or min(lengths) < l_min:
                    problems.append(f'node {i}: rod shorter than l_min')
            elif topo.used[i]:
                p = self.fixed_positions[i]
                if p is None or abs(p[0]) > B or abs(p[1]) > B:
                    problems.append(f'node {i}: fixed position missing or out of bounds')
        if self.motor.radius < l_min:
            problems.append('motor radius shorter than l_min')
        cx, cy = self.motor.center
        if abs(cx) > B or abs(cy) > B:
            problems.append('motor center out of bounds')
        return problems

    def compact(self) -> tuple['LinkageDesign', tuple[int, ...]]:
        """Drop unused nodes; returns the design and the kept original indices."""
        keep = tuple(i for i in range(self.K) if self.topology.used[i])
        remap = {old: new for new, old in enumerate(keep)}
        topo = self.topology
        parents = tuple(
            None if topo.parents[i] is None
            else (remap[topo.parents[i][0]], remap[topo.parents[i][1]]) for i in keep)
        new_topo = Topology(tuple(True for _ in keep), tuple(topo.fixed[i] for i in keep),
                            parents, topo.direction)
        design = LinkageDesign(new_topo, tuple(self.rod_lengths[i] for i in keep),
                               tuple(self.fixed_positions[i] for i in keep), self.motor)
        return design, keep


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Node positions over one motor revolution, shape ``(T, K, 2)``.

    Row ``d`` is the pose at motor angle increment ``2*pi*(d+1)/T``.
    """

    positions: np.ndarray

    def __post_init__(self):
        arr = np.array(self.positions, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValueError(f'trajectory must have shape (T, K, 2), got {arr.shape}')
        arr.setflags(write=False)
        object.__setattr__(self, 'positions', arr)

    @property
    def T(self) -> int:
        return self.positions.shape[0]

    @property
    def K(self) -> int:
        return self.positions.shape[1]

    @property
    def end_effector(self) -> np.ndarray:
        return self.positions[:, -1, :]

    def __eq__(self, other):
        return isinstance(other, Trajectory) and np.array_equal(self.positions, other.positions)


# Theo Jansen's published link proportions (crank axle at the origin).
_JANSEN = dict(a=38.0, b=41.5, c=39.3, d=40.1, e=55.8, f=39.4, g=36.7,
               h=65.7, i=49.0, j=50.0, k=61.9, l=7.8, m=15.0)


def jansen_preset(extent: float = 1.6) -> LinkageDesign:
    """The 7-node Jansen leg scaled so its full motion fits a box of side ``extent``.

    Node map: 0 crank tip, 1 frame pivot, 2 upper joint, 3 upper-left joint,
    4 lower joint, 5 knee, 6 foot.
    """
    p = _JANSEN
    parents = (None, None, (1, 0), (1, 2), (0, 1), (4, 3), (4, 5))
    lengths = (None, None, (p['b'], p['j']), (p['d'], p['e']), (p['k'], p['c']),
               (p['g'], p['f']), (p['i'], p['h']))
    pivot = (-p['a'], -p['l'])
    topo = Topology((True,) * 7, (False, True, False, False, False, False, False), parents, 1)
    raw = LinkageDesign(topo, lengths, (None, pivot, None, None, None, None, None),
                        Motor((0.0, 0.0), p['m'], math.pi / 2))

    from .kin import simulate_cycle  # local import: kin depends on core

    pts = simulate_cycle(raw, 128).positions.reshape(-1, 2)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2
    s = extent / float(np.max(hi - lo))

    def tf(q):
        return (float((q[0] - center[0]) * s), float((q[1] - center[1]) * s))

    return LinkageDesign(
        topo,
        tuple(None if L is None else (L[0] * s, L[1] * s) for L in lengths),
        (None, tf(pivot), None, None, None, None, None),
        Motor(tf((0.0, 0.0)), p['m'] * s, math.pi / 2),
    )
