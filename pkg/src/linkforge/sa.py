"""Simulated-annealing baseline over designs (topology and dimensions together)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import LinkageDesign, Motor, ProblemSpec, Topology, validate_topology
from .instances import random_design
from .kin import KinematicsError, simulate_cycle, trajectory_error, verify_design

log = logging.getLogger(__name__)

MOVES = ('geometric', 'add', 'remove')


class SaError(RuntimeError):
    pass


@dataclass(frozen=True)
class SaConfig:
    iterations: int = 1_000_000
    initial_temperature: float | None = None     # None: initial objective / 10
    cooling: float = 0.999
    cool_every: int = 1000
    weights: tuple[float, float, float] = (0.8, 0.1, 0.1)
    retry_cap: int = 100
    sigma: float = 0.02
    trace_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.cooling < 1:
            raise ValueError('cooling factor must lie in (0, 1)')
        if abs(sum(self.weights) - 1.0) > 1e-12 or min(self.weights) < 0:
            raise ValueError('move weights must be non-negative and sum to 1')


@dataclass
class SaResult:
    design: LinkageDesign
    objective: float
    trace: list = field(default_factory=list)      # (iteration, best objective)
    accepted: int = 0
    rejected_invalid: int = 0


def _with(design: LinkageDesign, **kw) -> LinkageDesign:
    return replace(design, **kw)


def _geometric(design: LinkageDesign, rng: np.random.Generator, sigma: float) -> LinkageDesign:
    topo = design.topology
    slots = [('motor', 'radius'), ('motor', 'cx'), ('motor', 'cy'), ('motor', 'phase')]
    for i in range(1, design.K):
        if topo.movable(i):
            slots += [('rod', i, 0), ('rod', i, 1)]
        else:
            slots += [('fixed', i, 0), ('fixed', i, 1)]
    pick = slots[rng.integers(len(slots))]
    noise = float(rng.normal(0.0, sigma))
    if pick[0] == 'motor':
        m = design.motor
        if pick[1] == 'radius':
            m = replace(m, radius=m.radius + noise)
        elif pick[1] == 'phase':
            m = replace(m, phase=m.phase + noise / max(m.radius, 1e-3))
        else:
            c = list(m.center)
            c[0 if pick[1] == 'cx' else 1] += noise
            m = replace(m, center=tuple(c))
        return _with(design, motor=m)
    lengths = list(design.rod_lengths)
    fixed = list(design.fixed_positions)
    _, i, k = pick
    if pick[0] == 'rod':
        L = list(lengths[i])
        L[k] += noise
        lengths[i] = tuple(L)
    else:
        p = list(fixed[i])
        p[k] += noise
        fixed[i] = tuple(p)
    return _with(design, rod_lengths=tuple(lengths), fixed_positions=tuple(fixed))


def _add(design: LinkageDesign, rng: np.random.Generator, B: float) -> LinkageDesign:
    topo = design.topology
    n = design.K
    j1, j2 = (int(v) for v in rng.choice(n, size=2, replace=False))
    try:
        pose = simulate_cycle(design, 1).positions[0]
    except KinematicsError:
        return design
    q = rng.uniform(-0.8 * B, 0.8 * B, 2)
    d1, d2 = pose[j1] - q, pose[j2] - q
    if d1[0] * d2[1] - d1[1] * d2[0] < 0:
        j1, j2, d1, d2 = j2, j1, d2, d1
    new_topo = Topology(topo.used + (True,), topo.fixed + (False,),
                        topo.parents + ((j1, j2),), topo.direction)
    return LinkageDesign(new_topo, design.rod_lengths + ((float(np.hypot(*d1)), float(np.hypot(*d2))),),
                         design.fixed_positions + (None,), design.motor)


def _remove(design: LinkageDesign) -> LinkageDesign:
    """Drop the end-effector; the last movable node takes its place."""
    topo = design.topology
    n = design.K - 1
    movable = [i for i in range(n) if topo.movable(i)]
    last = movable[-1]
    order = [i for i in range(last) ] + [i for i in range(last + 1, n)] + [last]
    # keep only nodes that still feed the new end-effector
    needed = {last}
    for i in range(last, -1, -1):
        if i in needed and topo.parents[i] is not None:
            needed.update(topo.parents[i])
    needed.add(0)
    order = [i for i in order if i in needed]
    remap = {old: new for new, old in enumerate(order)}
    parents = tuple(None if topo.parents[i] is None else
                    (remap[topo.parents[i][0]], remap[topo.parents[i][1]]) for i in order)
    new_topo = Topology((True,) * len(order), tuple(topo.fixed[i] for i in order), parents,
                        topo.direction)
    return LinkageDesign(new_topo, tuple(design.rod_lengths[i] for i in order),
                         tuple(design.fixed_positions[i] for i in order), design.motor)


def random_move(design: LinkageDesign, kind: str, rng: np.random.Generator,
                sigma: float = 0.02, B: float = 1.0) -> LinkageDesign:
    """One proposal; the result is not checked for validity."""
    if kind == 'geometric':
        return _geometric(design, rng, sigma)
    if kind == 'add':
        return _add(design, rng, B)
    if kind == 'remove':
        if design.K <= 3:
            raise ValueError('cannot remove a node from a 3-node design')
        return _remove(design)
    raise ValueError(f'unknown move {kind!r}')


def evaluate(design: LinkageDesign, spec: ProblemSpec) -> float | None:
    """Aligned objective of a valid design, or ``None`` when it is invalid."""
    if design.K > spec.K or validate_topology(design.topology, design.K):
        return None
    if design.check_invariants(spec.l_min, spec.B):
        return None
    try:
        traj = simulate_cycle(design, spec.T, singular_tol=0.0)
    except KinematicsError:
        return None
    if not verify_design(design, spec, traj).passed:
        return None
    return trajectory_error(traj, spec.target_array, spec.w, design.K, align=True)


def valid_move(design: LinkageDesign, spec: ProblemSpec, rng: np.random.Generator,
               config: SaConfig) -> tuple[LinkageDesign, float] | None:
    """Retry random moves until one yields a valid design (or the cap is hit)."""
    kinds = list(MOVES)
    for _ in range(config.retry_cap):
        kind = kinds[rng.choice(3, p=config.weights)]
        if kind == 'add' and design.K >= spec.K:
            continue
        if kind == 'remove' and design.K <= 3:
            continue
        cand = random_move(design, kind, rng, config.sigma, spec.B)
        if cand is design:
            continue
        obj = evaluate(cand, spec)
        if obj is not None:
            return cand, obj
    return None


def accept(delta: float, temperature: float, rng: np.random.Generator) -> bool:
    if delta <= 0:
        return True
    if temperature <= 0:
        return False
    return bool(rng.random() < math.exp(-delta / temperature))


def sa_search(spec: ProblemSpec, config: SaConfig = SaConfig(),
              initial: LinkageDesign | None = None) -> SaResult:
    rng = np.random.default_rng(config.seed)
    if initial is None:
        try:
            initial, _ = random_design(3, rng, B=spec.B, l_min=spec.l_min, epsilon=spec.epsilon,
                                       S=None, T=spec.T, max_tries=config.retry_cap * 100)
        except RuntimeError as exc:
            raise SaError(f'no valid initial design: {exc}') from exc
    obj = evaluate(initial, spec)
    if obj is None:
        raise SaError('initial design is not valid')
    current, cur_obj = initial, obj
    best, best_obj = current, cur_obj
    tau = cur_obj / 10 if config.initial_temperature is None else config.initial_temperature
    result = SaResult(best, best_obj)
    for it in range(1, config.iterations + 1):
        move = valid_move(current, spec, rng, config)
        if move is None:
            result.rejected_invalid += 1
        else:
            cand, c_obj = move
            if accept(c_obj - cur_obj, tau, rng):
                current, cur_obj = cand, c_obj
                result.accepted += 1
                if cur_obj < best_obj:
                    best, best_obj = current, cur_obj
        if it % config.cool_every == 0:
            tau *= config.cooling
        if it % config.trace_every == 0:
            result.trace.append((it, best_obj))
    result.design, result.objective = best, best_obj
    return result
