"""Branch-and-bound over binaries and SOS sets on top of :mod:`linkforge.relax`."""
from __future__ import annotations

import heapq
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import LinkageDesign, Motor, ProblemSpec, Topology, Trajectory
from .model.builders import VariableLayout
from .model.check import check_assignment, sos_violation
from .model.encode import repair_guarded
from .model.ir import MicpModel
from .relax import CUT_TOL, BranchState, Relaxation, RelaxResult

log = logging.getLogger(__name__)

INT_TOL = 1e-9
SOS_TOL = 1e-9


class ExtractionError(RuntimeError):
    pass


@dataclass
class BBParams:
    mip_gap: float = 1e-6
    abs_gap: float = 1e-9
    time_limit: float = math.inf
    node_limit: int | None = None
    cut_tol: float = CUT_TOL
    workers: int = 1
    seed: int = 0
    rounding: bool = True           # sos_rounding at settled nodes, polish of heuristic points
    cutoff: float = math.inf        # prune nodes whose bound reaches this value

    @classmethod
    def from_spec(cls, spec: ProblemSpec, **kw) -> 'BBParams':
        return cls(mip_gap=spec.mip_gap, time_limit=spec.time_limit, seed=spec.seed, **kw)


@dataclass
class BBNode:
    branch: BranchState
    parent_bound: float
    depth: int
    index: int

    def __lt__(self, other: 'BBNode') -> bool:
        # ties on the bound go to the shallowest node, then the newest one
        return ((self.parent_bound, self.depth, -self.index)
                < (other.parent_bound, other.depth, -other.index))


@dataclass
class Incumbent:
    x: np.ndarray
    objective: float
    violations: dict
    time: float
    nodes: int
    source: str = 'relaxation'


@dataclass
class BBResult:
    status: str                     # optimal | infeasible | time_limit | node_limit
    incumbent: Incumbent | None
    lower_bound: float
    gap: float
    nodes: int
    elapsed: float
    log: list = field(default_factory=list)   # (nodes, lower_bound, incumbent)
    incumbents: list = field(default_factory=list)
    rejected: int = 0               # integral relaxation points that failed the check

    @property
    def objective(self) -> float:
        return self.incumbent.objective if self.incumbent else math.inf


@dataclass(frozen=True)
class Branching:
    kind: str                       # 'binary' | 'sos'
    target: int                     # variable or set index
    children: tuple                 # tuple of dicts for BranchState.child


def _window_weights(model: MicpModel, branch: BranchState, s: int, x) -> tuple[int, int, np.ndarray]:
    members = model.sos_sets[s].members
    a, b = branch.window(s, len(members))
    return a, b, np.abs(np.asarray([x[m] for m in members[a:b + 1]]))


def _inactive(x, guards: dict | None, s: int) -> bool:
    g = guards.get(s) if guards else None
    return g is not None and abs(x[g] - 1.0) <= INT_TOL


def select_branch(model: MicpModel, result: RelaxResult,
                  branch: BranchState | None = None, guards: dict | None = None) -> Branching:
    """Deterministic branching decision for a fractional relaxation point.

    ``guards`` maps SOS sets to a binary whose value 1 deactivates every
    constraint on the set; such sets are never branched on.
    """
    branch = branch or BranchState()
    x = result.x
    best, best_i = INT_TOL, -1
    for i in model.binaries:
        f = min(x[i] - math.floor(x[i]), math.ceil(x[i]) - x[i])
        if f > best + 1e-15:
            best, best_i = f, i
    if best_i >= 0:
        down = ({}, {best_i: 0.0}, {})
        up = ({best_i: 1.0}, {}, {})
        first = (up, down) if x[best_i] >= 0.5 else (down, up)
        return Branching('binary', best_i, first)
    # structural sets first: once the topology is settled the remaining
    # relaxations are those of a single mechanism
    best, best_s = SOS_TOL, -1
    for structural in (True, False):
        for s, sos in enumerate(model.sos_sets):
            if (sos.family == 'topology') != structural or _inactive(x, guards, s):
                continue
            v = sos_violation(sos.kind, [x[m] for m in sos.members])
            if v > best + 1e-15:
                best, best_s = v, s
        if best_s >= 0:
            break
    if best_s < 0:
        raise ValueError('relaxation point is integral and SOS-feasible; nothing to branch on')
    a, b, w = _window_weights(model, branch, best_s, x)
    if model.sos_sets[best_s].kind == 1:
        cum = np.cumsum(w)
        p = a + int(np.searchsorted(cum, cum[-1] / 2.0))
        p = min(p, b - 1)
        left, right = (a, p), (p + 1, b)
        heavy_left = cum[p - a] >= cum[-1] - cum[p - a]
    else:
        inner = w[1:-1]
        p = a + 1 + int(np.argmax(inner))
        left, right = (a, p), (p, b)
        heavy_left = w[:p - a].sum() >= w[p - a + 1:].sum()
    kids = [({}, {}, {best_s: left}), ({}, {}, {best_s: right})]
    return Branching('sos', best_s, tuple(kids if heavy_left else kids[::-1]))


def sos_rounding(model: MicpModel, x, branch: BranchState,
                 guards: dict | None = None) -> BranchState:
    """Restriction fixing every binary and collapsing every active SOS window.

    SOS2 sets keep the segment around their weighted centroid (for an
    interpolation set this is the segment containing the represented value),
    SOS1 sets keep their heaviest member.  The result is a single LP-sized
    subproblem whose solutions, if any, are integral.
    """
    lb = {int(i): float(round(x[i])) for i in model.binaries}
    ub = dict(lb)
    windows = {}
    for s, sos in enumerate(model.sos_sets):
        if _inactive(x, guards, s):
            continue
        a, b, w = _window_weights(model, branch, s, x)
        if sos.kind == 1 or b == a:
            p = a + int(np.argmax(w))
            windows[s] = (p, p)
            continue
        total = w.sum()
        c = a + (float(w @ np.arange(len(w))) / total if total > 0 else 0.0)
        p = min(max(int(math.floor(c)), a), b - 1)
        windows[s] = (p, p + 1)
    return branch.child(lb, ub, windows)


def support_polish(model: MicpModel, x, branch: BranchState,
                   guards: dict | None = None) -> BranchState:
    """Restriction to the binaries and SOS segments a feasible ``x`` already uses.

    Re-optimising over it is one LP whose optimum is integral and no worse
    than ``x``.
    """
    lb = {int(i): float(round(x[i])) for i in model.binaries}
    windows = {}
    for s, sos in enumerate(model.sos_sets):
        if _inactive(x, guards, s):
            continue
        w = np.abs(np.asarray([x[m] for m in sos.members]))
        p = int(np.argmax(w))
        if sos.kind == 1 or len(w) == 1:
            windows[s] = (p, p)
        elif p + 1 < len(w) and (p == 0 or w[p + 1] >= w[p - 1]):
            windows[s] = (p, p + 1)
        else:
            windows[s] = (p - 1, p)
    return branch.child(lb, dict(lb), windows)


def _is_candidate(model: MicpModel, x, guards: dict | None = None) -> bool:
    for i in model.binaries:
        if abs(x[i] - round(x[i])) > INT_TOL:
            return False
    for s, sos in enumerate(model.sos_sets):
        if _inactive(x, guards, s):
            continue
        if sos_violation(sos.kind, [x[m] for m in sos.members]) > SOS_TOL:
            return False
    return True


def _clean(model: MicpModel, x) -> np.ndarray:
    x = np.array(x, dtype=float)
    for i in model.binaries:
        x[i] = float(round(x[i]))
    return np.clip(x, model.lb, model.ub)


def _topology_settled(model: MicpModel, x) -> bool:
    for i in model.binaries:
        if abs(x[i] - round(x[i])) > INT_TOL:
            return False
    for sos in model.sos_sets:
        if sos.family == 'topology' and sos_violation(sos.kind, [x[m] for m in sos.members]) > SOS_TOL:
            return False
    return True


def solve_micp(model: MicpModel, layout: VariableLayout | None = None,
               params: BBParams | None = None, branch: BranchState | None = None,
               heuristic=None) -> BBResult:
    """Global minimisation of ``model`` to the relative gap in ``params``.

    Depth-first plunging until the first incumbent, best-bound afterwards.
    ``heuristic(x)`` is offered every relaxation point whose binaries and
    topology selectors are integral; it may return a full assignment, which
    becomes the incumbent only if it passes the feasibility check.
    """
    params = params or BBParams()
    guards = layout.guards if layout is not None else None
    start = time.perf_counter()
    engines = [Relaxation(model, params.cut_tol) for _ in range(max(1, params.workers))]
    pool = ThreadPoolExecutor(len(engines)) if len(engines) > 1 else None
    counter = 0
    root = branch or BranchState()
    stack: list[BBNode] = [BBNode(root, -math.inf, 0, 0)]
    heap: list[BBNode] = []
    plunging = True
    incumbent: Incumbent | None = None
    incumbents: list[Incumbent] = []
    nodes = 0
    root_bound = -math.inf
    conv: list = []
    status = None
    last_lb = -math.inf
    rejected = 0
    inflight = math.inf     # weakest bound among nodes being processed
    rounds_tried = 0

    def open_nodes():
        return stack if plunging else heap

    def global_lb() -> float:
        nonlocal last_lb
        pending = open_nodes()
        lb = min(min((n.parent_bound for n in pending), default=math.inf), inflight)
        if incumbent is not None:
            lb = min(lb, incumbent.objective)
        last_lb = max(last_lb, lb)
        return last_lb

    def cutoff() -> float:
        if incumbent is None:
            return params.cutoff
        return min(params.cutoff, incumbent.objective
                   - max(params.abs_gap, params.mip_gap * abs(incumbent.objective)))

    def record():
        conv.append((nodes, global_lb(), incumbent.objective if incumbent else math.inf))

    def offer(x, source) -> bool:
        """Check a full assignment; True when it is feasible."""
        nonlocal incumbent, plunging, heap, stack
        rep = check_assignment(model, x)
        if not (rep['linear'] <= 1e-9 and rep['bound'] <= 1e-9 and rep['integrality'] == 0.0
                and rep['sos'] <= SOS_TOL and rep['quad'] <= params.cut_tol):
            return False
        obj = model.objective_value(x)
        if incumbent is None or obj < incumbent.objective:
            incumbent = Incumbent(x, obj, rep, time.perf_counter() - start, nodes, source)
            incumbents.append(incumbent)
            log.info('incumbent %.9g at node %d (%s)', obj, nodes, source)
            if plunging:
                plunging = False
                heap = list(stack)
                heapq.heapify(heap)
                stack = []
            record()
        return True

    try:
        while open_nodes():
            if time.perf_counter() - start > params.time_limit:
                status = 'time_limit'
                break
            if params.node_limit is not None and nodes >= params.node_limit:
                status = 'node_limit'
                break
            batch = []
            while open_nodes() and len(batch) < len(engines):
                node = stack.pop() if plunging else heapq.heappop(heap)
                if node.parent_bound >= cutoff():
                    continue
                batch.append(node)
            if not batch:
                continue
            inflight = min(n.parent_bound for n in batch)
            if pool is None:
                results = [engines[0].solve(batch[0].branch)]
            else:
                results = list(pool.map(lambda p: p[0].solve(p[1].branch), zip(engines, batch)))
            for node, res in zip(batch, results):
                nodes += 1
                if node.depth == 0:
                    root_bound = res.bound
                if res.status == 'infeasible':
                    continue
                bound = max(res.bound, node.parent_bound)
                if bound >= cutoff():
                    continue
                if heuristic is not None and _topology_settled(model, res.x):
                    hx = heuristic(res.x)
                    if hx is not None and offer(hx, 'heuristic') and params.rounding:
                        pres = engines[0].solve(support_polish(model, hx, root, guards))
                        if pres.status == 'optimal' and _is_candidate(model, pres.x, guards):
                            px = _clean(model, pres.x)
                            if layout is not None:
                                px = repair_guarded(model, layout, px)
                            offer(px, 'polish')
                        if bound >= cutoff():
                            continue
                if params.rounding and _topology_settled(model, res.x) \
                        and not _is_candidate(model, res.x, guards):
                    rres = engines[0].solve(sos_rounding(model, res.x, node.branch, guards))
                    rounds_tried += 1
                    if rres.status == 'optimal' and _is_candidate(model, rres.x, guards):
                        rx = _clean(model, rres.x)
                        if layout is not None:
                            rx = repair_guarded(model, layout, rx)
                        offer(rx, 'rounding')
                        if bound >= cutoff():
                            continue
                if _is_candidate(model, res.x, guards):
                    x = _clean(model, res.x)
                    if layout is not None:
                        x = repair_guarded(model, layout, x)
                    if offer(x, 'relaxation'):
                        continue
                    rep = check_assignment(model, x)
                    log.warning('integral point at node %d fails the feasibility check (%s);'
                                ' node dropped', nodes,
                                ', '.join(f'{k}={v:.2g}' for k, v in rep.items()))
                    rejected += 1
                    continue
                choice = select_branch(model, res, node.branch, guards)
                kids = []
                for lb, ub, sos in choice.children:
                    counter += 1
                    kids.append(BBNode(node.branch.child(lb, ub, sos), bound, node.depth + 1, counter))
                if plunging:
                    stack.extend(reversed(kids))
                else:
                    for k in kids:
                        heapq.heappush(heap, k)
            inflight = math.inf
            if nodes % 50 == 0:
                record()
    finally:
        if pool is not None:
            pool.shutdown()

    if status is None:
        status = 'optimal' if incumbent is not None else 'infeasible'
    lb = global_lb() if status != 'optimal' else (
        incumbent.objective if not open_nodes() else global_lb())
    if status == 'optimal':
        lb = max(min(lb, incumbent.objective), last_lb)
    record()
    inc_obj = incumbent.objective if incumbent else math.inf
    gap = 0.0 if incumbent is None and status == 'infeasible' else (
        (inc_obj - lb) / max(abs(inc_obj), 1e-12) if incumbent else math.inf)
    return BBResult(status, incumbent, lb, max(gap, 0.0), nodes, time.perf_counter() - start,
                    conv, incumbents, rejected)


def _selected(x, arr, label) -> int | None:
    hits = [j for j in range(len(arr)) if arr[j] >= 0 and x[arr[j]] > 1e-6]
    if len(hits) > 1:
        raise ExtractionError(f'ambiguous selection for {label}: {hits}')
    return hits[0] if hits else None


def extract_design(x, layout: VariableLayout, spec: ProblemSpec) -> tuple[LinkageDesign, Trajectory]:
    """Read a compact design and its MICP trajectory from an integral assignment."""
    K, T = layout.K, layout.T
    x = np.asarray(x, dtype=float)
    used = [x[layout.U[i]] > 0.5 for i in range(K)]
    fixed = [x[layout.F[i]] > 0.5 for i in range(K)]
    parents: list = [None] * K
    lengths: list = [None] * K
    fixed_pos: list = [None] * K
    for i in range(1, K):
        if not used[i]:
            fixed[i] = True
            continue
        if fixed[i]:
            fixed_pos[i] = (float(x[layout.x[i, 0]]), float(x[layout.y[i, 0]]))
            continue
        j1 = _selected(x, layout.C1[:, i], f'first parent of node {i}')
        j2 = _selected(x, layout.C2[:, i], f'second parent of node {i}')
        if j1 is None or j2 is None:
            raise ExtractionError(f'movable node {i} lacks a parent')
        parents[i] = (j1, j2)
        lengths[i] = tuple(float(math.hypot(x[layout.dx[k, i, 0]], x[layout.dy[k, i, 0]]))
                           for k in range(2))
    D = int(round(x[layout.D]))
    ox, oy = x[layout.dx[0, 0, 0]], x[layout.dy[0, 0, 0]]
    s = 1.0 if D == 1 else -1.0
    phase = math.atan2(ox, oy) - s * 2 * math.pi / T
    phase = math.remainder(phase, 2 * math.pi)
    motor = Motor((float(x[layout.XC]), float(x[layout.YC])), float(math.hypot(ox, oy)), phase)
    topo = Topology(tuple(used), tuple(fixed), tuple(parents), D)
    full = LinkageDesign(topo, tuple(lengths), tuple(fixed_pos), motor)
    design, keep = full.compact()
    P = np.zeros((T, len(keep), 2))
    for new, old in enumerate(keep):
        P[:, new, 0] = x[layout.x[old, :]]
        P[:, new, 1] = x[layout.y[old, :]]
    return design, Trajectory(P)
