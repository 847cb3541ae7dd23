"""End-to-end synthesis: build, branch-and-bound, extract, refine, verify."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from dataclasses import replace

import numpy as np

from .bb import BBParams, BBResult, ExtractionError, extract_design, solve_micp
from .core import (LinkageDesign, ProblemSpec, Topology, Trajectory, enumerate_topologies,
                   validate_topology)
from .relax import BranchState
from .kin import KinematicsError, simulate_cycle, trajectory_error, verify_design
from .model import EncodingError, MicpModel, VariableLayout, build_model, encode_design
from .refine import RefineReport, refine

log = logging.getLogger(__name__)


def used_slots(x, layout: VariableLayout) -> tuple[int, ...]:
    return tuple(i for i in range(layout.K) if x[layout.U[i]] > 0.5)


class RefineHeuristic:
    """Turn a relaxation point with a settled topology into an exact design.

    The topology is read off the point, the continuous problem is refined
    from the point's positions, and the simulated result is encoded back into
    a full assignment.  A topology (with direction) seen again is retried
    with exponential backoff, at most ``attempts`` times.
    """

    def __init__(self, spec: ProblemSpec, model: MicpModel, layout: VariableLayout,
                 attempts: int = 6, max_outer: int = 10, max_inner: int = 30):
        self.spec, self.model, self.layout = spec, model, layout
        self.attempts = attempts
        self.max_outer, self.max_inner = max_outer, max_inner
        # angles in this range are admitted by some sector pair
        self.epsilon = spec.epsilon + math.pi / spec.S
        self.tried: dict = {}
        self.calls = 0
        self.successes = 0

    def key(self, x) -> tuple:
        lay = self.layout
        sel = (lay.C1[lay.C1 >= 0], lay.C2[lay.C2 >= 0])
        return tuple(int(round(x[i])) for i in self.model.binaries) + tuple(
            int(x[i] > 0.5) for arr in sel for i in arr)

    def __call__(self, x):
        k = self.key(x)
        seen = self.tried[k] = self.tried.get(k, 0) + 1
        # deeper points of a known topology get retried on visits 1, 2, 4, 8, ...
        if seen & (seen - 1) or seen.bit_length() > self.attempts:
            return None
        self.calls += 1
        try:
            design, traj = extract_design(x, self.layout, self.spec)
            if validate_topology(design.topology, design.K):
                return None
            keep = used_slots(x, self.layout)
            new, _, rep = refine(design, traj, self.spec, self.max_outer, self.max_inner, keep,
                                 self.epsilon, offset_bound=True)
            exact = simulate_cycle(new, self.spec.T, singular_tol=0.0)
            if not verify_design(new, self.spec, exact).passed:
                return None
            full = encode_design(new, self.spec, self.model, self.layout, traj=exact, slots=keep)
        except (ExtractionError, KinematicsError, EncodingError, ValueError,
                np.linalg.LinAlgError) as exc:
            log.debug('heuristic failed: %s', exc)
            return None
        self.successes += 1
        return full


def fix_topology(topo: Topology, layout: VariableLayout) -> BranchState:
    """Branch restriction pinning every topology variable to ``topo`` (``K`` slots)."""
    K = layout.K
    fixed: dict = {}
    for i in range(K):
        fixed[int(layout.U[i])] = float(topo.used[i])
        fixed[int(layout.F[i])] = float(topo.fixed[i])
    fixed[int(layout.D)] = float(topo.direction)
    for i in range(1, K):
        p = topo.parents[i] if topo.movable(i) else None
        for k in range(2):
            fixed[int(layout.C0[k, i])] = 1.0 if p is None else 0.0
        for j in range(i):
            fixed[int(layout.C1[j, i])] = float(p is not None and p[0] == j)
            fixed[int(layout.C2[j, i])] = float(p is not None and p[1] == j)
    return BranchState(dict(fixed), dict(fixed), {})


@dataclass
class OracleResult:
    objective: float
    topology: Topology | None
    solves: list                    # (topology, status, objective, lower bound, nodes)
    exhaustive: bool                # every subproblem finished (optimal or infeasible)


def topology_oracle(spec: ProblemSpec, params: BBParams | None = None,
                    heuristic: bool = True) -> OracleResult:
    """Minimum over all topologies and directions of topology-fixed solves.

    Each subproblem is pruned against the best objective found so far, so
    a topology that cannot beat it finishes as soon as its bound says so.
    """
    model, layout = build_model(spec)
    params = params or BBParams.from_spec(spec)
    best, best_topo = math.inf, None
    solves = []
    exhaustive = True
    topos = [Topology(t.used, t.fixed, t.parents, d)
             for t in enumerate_topologies(spec.K) for d in (0, 1)]
    # small designs first: they are cheap and usually give a strong cutoff
    topos.sort(key=lambda t: t.used_count)
    for topo in topos:
        heur = RefineHeuristic(spec, model, layout) if heuristic else None
        p = replace(params, cutoff=best)
        res = solve_micp(model, layout, p, branch=fix_topology(topo, layout), heuristic=heur)
        solves.append((topo, res.status, res.objective, res.lower_bound, res.nodes))
        if res.status not in ('optimal', 'infeasible'):
            exhaustive = False
        if res.objective < best:
            best, best_topo = res.objective, topo
    return OracleResult(best, best_topo, solves, exhaustive)


@dataclass
class SynthesisResult:
    spec: ProblemSpec
    bb: BBResult
    design: LinkageDesign | None           # refined (or raw when refinement is off)
    trajectory: Trajectory | None          # exact simulation of ``design`` when valid
    raw_design: LinkageDesign | None
    raw_trajectory: Trajectory | None
    refine_report: RefineReport | None
    objective: float                       # tracking + w * nodes of ``design``
    verified: bool

    @property
    def status(self) -> str:
        return self.bb.status


def synthesize(spec: ProblemSpec, params: BBParams | None = None, do_refine: bool = True,
               heuristic: bool = True) -> SynthesisResult:
    model, layout = build_model(spec)
    params = params or BBParams.from_spec(spec)
    heur = RefineHeuristic(spec, model, layout) if heuristic else None
    res = solve_micp(model, layout, params, heuristic=heur)
    if res.incumbent is None:
        return SynthesisResult(spec, res, None, None, None, None, None, math.inf, False)
    raw, raw_traj = extract_design(res.incumbent.x, layout, spec)
    # a polished or relaxation incumbent may lean on the PWL slack; the last
    # refined heuristic point is exact and sometimes ends up better
    sources = [res.incumbent]
    exact = [inc for inc in res.incumbents if inc.source == 'heuristic']
    if do_refine and exact and exact[-1] is not res.incumbent:
        sources.append(exact[-1])
    best = None
    for inc in sources:
        cand = _finish(spec, layout, inc.x, do_refine)
        if best is None or _better(cand, best):
            best = cand
    design, traj, objective, verified, rep = best
    return SynthesisResult(spec, res, design, traj, raw, raw_traj, rep, objective, verified)


def _better(a, b) -> bool:
    # verified designs first, then the true objective
    return (not a[3], a[2]) < (not b[3], b[2])


def _finish(spec: ProblemSpec, layout: VariableLayout, x, do_refine: bool):
    raw, raw_traj = extract_design(x, layout, spec)
    design, rep = raw, None
    if do_refine:
        design, _, rep = refine(raw, raw_traj, spec, keep=used_slots(x, layout))
        if not rep.success:
            log.warning('refinement stopped early: %s', rep.message or 'not converged')
    try:
        traj = simulate_cycle(design, spec.T, singular_tol=0.0)
        verified = verify_design(design, spec, traj).passed
    except KinematicsError:
        traj, verified = None, False
    if traj is not None:
        objective = trajectory_error(traj, spec.target_array, spec.w, design.K)
    else:
        objective = math.inf
    return design, traj, objective, verified, rep
