"""Encode a known design into a full assignment of the program's variables.

Used as a fixture encoder (feasibility of known designs, generate-and-recover
instances) and to seed topology-fixed copies of the model.
"""
from __future__ import annotations

import math

import numpy as np

from ..core import LinkageDesign, ProblemSpec, Topology, Trajectory
from ..kin import simulate_cycle
from .builders import VariableLayout
from .geometry import PwlGrid, SectorTable
from .ir import MicpModel


class EncodingError(ValueError):
    pass


def embed_topology(topo: Topology, slots: tuple[int, ...], K: int) -> Topology:
    """Place a compact topology into ``K`` slots; empty slots become unused."""
    if slots[0] != 0 or slots[-1] != K - 1 or list(slots) != sorted(set(slots)):
        raise EncodingError('slots must be increasing, start at 0 and end at K-1')
    used = [False] * K
    fixed = [True] * K
    parents: list = [None] * K
    for new, old in enumerate(slots):
        used[old] = True
        fixed[old] = topo.fixed[new]
        p = topo.parents[new]
        parents[old] = None if p is None else (slots[p[0]], slots[p[1]])
    fixed[0] = False
    return Topology(tuple(used), tuple(fixed), tuple(parents), topo.direction)


def default_slots(n: int, K: int) -> tuple[int, ...]:
    """Keep the first ``n-1`` nodes in place and move the end-effector to ``K-1``."""
    if n > K:
        raise EncodingError(f'design has {n} nodes but the model only {K} slots')
    return tuple(range(n - 1)) + (K - 1,)


def _flows(topo: Topology):
    K = topo.K
    children = [[] for _ in range(K)]
    for i in range(K):
        if topo.movable(i) and topo.parents[i] is not None:
            for j in dict.fromkeys(topo.parents[i]):
                children[j].append(i)
    reaches = [False] * K
    reaches[K - 1] = True
    for i in range(K - 2, -1, -1):
        reaches[i] = any(reaches[c] for c in children[i])
    Q = np.zeros((K, K))
    inflow = np.zeros(K)
    for i in range(K - 1):
        out = float(topo.used[i]) + inflow[i]
        if out == 0:
            continue
        c = next((c for c in children[i] if reaches[c]), None)
        if c is None:
            raise EncodingError(f'node {i} cannot reach the end-effector')
        Q[i, c] += out
        inflow[c] += out
    R = np.zeros((K, K))
    rin = np.zeros(K)
    for i in range(K - 1, 0, -1):
        out = float(topo.movable(i)) + rin[i]
        if out == 0:
            continue
        ps = topo.parents[i] or ()
        j = next((j for j in ps if not topo.fixed[j]), None)
        if j is None:
            raise EncodingError(f'node {i} has no movable parent')
        R[j, i] += out
        rin[j] += out
    return Q, R


def encode_design(design: LinkageDesign, spec: ProblemSpec, model: MicpModel,
                  layout: VariableLayout, traj: Trajectory | None = None,
                  slots: tuple[int, ...] | None = None, sector_tol: float = 0.0) -> np.ndarray:
    """Full assignment reproducing ``design`` (simulated at ``spec.T`` samples)."""
    K, T = spec.K, spec.T
    compact, _ = design.compact()
    if slots is None:
        slots = default_slots(compact.K, K)
    topo = embed_topology(compact.topology, tuple(slots), K)
    if traj is None:
        traj = simulate_cycle(compact, T)
    P = np.zeros((T, K, 2))
    P[:, list(slots), :] = traj.positions
    x = np.zeros(model.n)
    lay = layout
    for i in range(K):
        x[lay.U[i]] = float(topo.used[i])
        x[lay.F[i]] = float(topo.fixed[i])
        for d in range(T):
            x[lay.x[i, d]], x[lay.y[i, d]] = P[d, i]
    x[lay.D] = float(topo.direction)
    x[lay.XC], x[lay.YC] = design.motor.center
    for i in range(1, K):
        x[lay.C0[:, i]] = 1.0
        if topo.movable(i):
            j1, j2 = topo.parents[i]
            x[lay.C0[:, i]] = 0.0
            x[lay.C1[j1, i]] = 1.0
            x[lay.C2[j2, i]] = 1.0
            x[lay.C[j1, i]] += 1.0
            x[lay.C[j2, i]] += 1.0
    Q, R = _flows(topo)
    for i in range(1, K):
        for j in range(i):
            x[lay.Q[j, i]] = Q[j, i]
            x[lay.R[j, i]] = R[j, i]

    grid = PwlGrid(spec.B, spec.S)
    table = SectorTable(spec.S, spec.epsilon)
    center = np.asarray(design.motor.center)
    for d in range(T):
        for i in range(K):
            if i == 0:
                off = [P[d, 0] - center] * 2
            elif topo.movable(i):
                off = [P[d, j] - P[d, i] for j in topo.parents[i]]
            else:
                off = [np.zeros(2), np.zeros(2)]
            for k in range(2):
                for axis, dv, tv, lv in ((0, lay.dx, lay.tdx, lay.lam_dx),
                                         (1, lay.dy, lay.tdy, lay.lam_dy)):
                    val = float(off[k][axis])
                    if abs(val) > spec.B + 1e-12:
                        raise EncodingError(
                            f'offset {val:.4g} of node {i} exceeds the workspace half-width')
                    lam = grid.weights(val)
                    x[dv[k, i, d]] = val
                    x[lv[k, i, d, :]] = lam
                    x[tv[k, i, d]] = float(lam @ grid.squares)
            if i >= 1:
                if topo.movable(i):
                    adm = table.admitting(off[0], off[1], sector_tol)
                    if not adm:
                        ang = math.atan2(off[0][0] * off[1][1] - off[0][1] * off[1][0],
                                         off[0] @ off[1])
                        raise EncodingError(
                            f'node {i} at sample {d}: no sector admits angle {ang:.4f}')
                    l = adm[0]
                else:
                    l = 0
                x[lay.gamma[i, d, l]] = 1.0
    return x


def repair_guarded(model: MicpModel, layout: VariableLayout, x) -> np.ndarray:
    """Complete the node-local SOS sets of fixed nodes.

    With ``F_i = 1`` every equidistance, length and sector constraint of node
    ``i`` is switched off, so its interpolation weights and sector selector
    may be replaced by any consistent choice.
    """
    x = np.array(x, dtype=float)
    K, T = layout.K, layout.T
    B = float(model.ub[layout.dx[0, 0, 0]])
    grid = PwlGrid(B, layout.S)
    for i in range(1, K):
        if x[layout.F[i]] < 0.5:
            continue
        for k in range(2):
            for d in range(T):
                for dv, tv, lv in ((layout.dx, layout.tdx, layout.lam_dx),
                                   (layout.dy, layout.tdy, layout.lam_dy)):
                    lam = grid.weights(float(np.clip(x[dv[k, i, d]], -B, B)))
                    x[lv[k, i, d, :]] = lam
                    x[tv[k, i, d]] = float(lam @ grid.squares)
        for d in range(T):
            x[layout.gamma[i, d, :]] = 0.0
            x[layout.gamma[i, d, 0]] = 1.0
    return x
