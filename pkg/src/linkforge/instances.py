"""Random generate-and-recover instances.

A random design is drawn, simulated, and kept only if the discretised model can
represent it exactly (offsets inside the PWL range, every parent pair admitted
by some sector).  Its end-effector samples then serve as a target whose optimal
objective is at most ``w`` times the design's node count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LinkageDesign, Motor, ProblemSpec, Topology, Trajectory, enumerate_topologies
from .kin import KinematicsError, rod_vectors, simulate_cycle, verify_design
from .model.geometry import SectorTable


@dataclass(frozen=True)
class Instance:
    spec: ProblemSpec
    design: LinkageDesign
    trajectory: Trajectory


def _full_topologies(n: int) -> list[Topology]:
    return [t for t in enumerate_topologies(n) if all(t.used)]


def encodable(design: LinkageDesign, traj: Trajectory, S: int, epsilon: float, B: float,
              margin: float = 1e-6) -> bool:
    P = traj.positions
    if not np.all(np.abs(P) <= B - margin):
        return False
    crank = P[:, 0] - np.asarray(design.motor.center)
    if np.any(np.abs(crank) > B - margin):
        return False
    table = SectorTable(S, epsilon)
    for _, d1, d2 in rod_vectors(design, P):
        if np.any(np.abs(d1) > B - margin) or np.any(np.abs(d2) > B - margin):
            return False
        for a, b in zip(d1, d2):
            if not table.admitting(a, b, margin):
                return False
    return True


def random_design(n: int, rng: np.random.Generator, *, B: float = 1.0, l_min: float = 0.1,
                  epsilon: float = 0.1, S: int | None = 9, T: int = 8, max_tries: int = 10000
                  ) -> tuple[LinkageDesign, Trajectory]:
    """A valid ``n``-node design that the (S, T) model can encode exactly.

    ``S=None`` skips the encodability test and only asks for validity.
    """
    topos = _full_topologies(n)
    for _ in range(max_tries):
        topo = topos[rng.integers(len(topos))]
        topo = Topology(topo.used, topo.fixed, topo.parents, int(rng.integers(2)))
        center = tuple(rng.uniform(-0.4 * B, 0.4 * B, 2))
        radius = float(rng.uniform(max(l_min, 0.15 * B), 0.35 * B))
        phase = float(rng.uniform(-math.pi, math.pi))
        motor = Motor(center, radius, phase)
        pos0 = np.zeros((n, 2))
        fixed_pos: list = [None] * n
        lengths: list = [None] * n
        s = 1.0 if topo.direction == 1 else -1.0
        a0 = phase + s * 2 * math.pi / T
        pos0[0] = (center[0] + radius * math.sin(a0), center[1] + radius * math.cos(a0))
        ok = True
        for i in range(1, n):
            if topo.fixed[i]:
                p = tuple(rng.uniform(-0.6 * B, 0.6 * B, 2))
                fixed_pos[i] = p
                pos0[i] = p
                continue
            pos0[i] = rng.uniform(-0.7 * B, 0.7 * B, 2)
            j1, j2 = topo.parents[i]
            d1, d2 = pos0[j1] - pos0[i], pos0[j2] - pos0[i]
            if d1[0] * d2[1] - d1[1] * d2[0] <= 0:
                ok = False
                break
            lengths[i] = (float(np.hypot(*d1)), float(np.hypot(*d2)))
            if min(lengths[i]) < l_min:
                ok = False
                break
        if not ok:
            continue
        design = LinkageDesign(topo, tuple(lengths), tuple(fixed_pos), motor)
        try:
            traj = simulate_cycle(design, T, singular_tol=0.0)
            fine = simulate_cycle(design, 64, singular_tol=0.0)
        except KinematicsError:
            continue
        if np.any(np.abs(fine.positions) > B) or np.any(np.abs(traj.positions) > B):
            continue
        spec = ProblemSpec(target=tuple(map(tuple, traj.end_effector)), K=max(n, 3), S=S or 3, T=T, B=B,
                           l_min=l_min, epsilon=epsilon)
        if not verify_design(design, spec).passed:
            continue
        if S is None or encodable(design, traj, S, epsilon, B):
            return design, traj
    raise RuntimeError(f'no encodable {n}-node design found in {max_tries} tries')


def generate_instance(K: int, S: int, T: int, seed: int, n: int | None = None,
                      **spec_kw) -> Instance:
    rng = np.random.default_rng(seed)
    spec0 = ProblemSpec(target=((0.0, 0.0),) * T, K=K, S=S, T=T, seed=seed, **spec_kw)
    design, traj = random_design(n or K, rng, B=spec0.B, l_min=spec0.l_min,
                                 epsilon=spec0.epsilon, S=S, T=T)
    spec = spec0.with_(target=tuple(tuple(map(float, p)) for p in traj.end_effector))
    return Instance(spec, design, traj)
