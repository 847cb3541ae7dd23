"""CSV logs and matplotlib figures written next to the JSON outputs."""
from __future__ import annotations

import csv
import math
import os

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..core import LinkageDesign, Trajectory  # noqa: E402
from .svg import EE_COLOR, TARGET_COLOR  # noqa: E402


def sidecar(path: str, suffix: str) -> str:
    """``out/design.json`` -> ``out/design.<suffix>``."""
    root, _ = os.path.splitext(path)
    return f'{root}.{suffix}'


def _cell(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ('inf' if v > 0 else '-inf' if v < 0 else 'nan')
    return v


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, 'w', newline='') as fh:
        out = csv.writer(fh, lineterminator='\n')
        out.writerow(header)
        for r in rows:
            out.writerow([_cell(v) for v in r])


def trajectory_rows(traj: Trajectory):
    P = traj.positions
    for d in range(P.shape[0]):
        for i in range(P.shape[1]):
            yield d, i, float(P[d, i, 0]), float(P[d, i, 1])


def plot_design(path: str, design: LinkageDesign, traj: Trajectory, target=None,
                frame: int = 0) -> None:
    P = traj.positions
    fig, ax = plt.subplots(figsize=(5, 5))
    if target is not None and len(target):
        t = np.vstack([target, target[:1]])
        ax.plot(t[:, 0], t[:, 1], '-o', color=TARGET_COLOR, lw=3, ms=4, label='target')
    ee = np.vstack([P[:, -1], P[:1, -1]])
    ax.plot(ee[:, 0], ee[:, 1], '-', color=EE_COLOR, lw=2, label='end-effector')
    pose = P[frame % len(P)]
    c = design.motor.center
    ax.add_patch(plt.Circle(c, design.motor.radius, fill=False, ls='--', color='0.6'))
    ax.plot([c[0], pose[0, 0]], [c[1], pose[0, 1]], color='0.2', lw=2)
    topo = design.topology
    for i in range(1, design.K):
        if topo.movable(i):
            for j in topo.parents[i]:
                ax.plot([pose[j, 0], pose[i, 0]], [pose[j, 1], pose[i, 1]], color='0.2', lw=2)
        elif topo.used[i]:
            ax.plot(*pose[i], 's', color='0.25', ms=7)
    ax.plot(*c, 'o', color='#cc3333', ms=6)
    ax.set_aspect('equal')
    ax.legend(loc='upper right', fontsize=8)
    ax.set_title(f'{design.K}-node design')
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_convergence(path: str, log: list) -> None:
    """Lower bound and incumbent against explored nodes."""
    if not log:
        return
    arr = np.array([(n, lb, inc) for n, lb, inc in log], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    lb = np.where(np.isfinite(arr[:, 1]), arr[:, 1], np.nan)
    inc = np.where(np.isfinite(arr[:, 2]), arr[:, 2], np.nan)
    ax.step(arr[:, 0], lb, where='post', label='lower bound')
    ax.step(arr[:, 0], inc, where='post', label='incumbent')
    ax.set_xlabel('nodes explored')
    ax.set_ylabel('objective')
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_trace(path: str, trace: list, label: str = 'best objective') -> None:
    if not trace:
        return
    arr = np.asarray(trace, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(arr[:, 0], arr[:, 1], label=label)
    ax.set_xlabel('iteration')
    ax.set_ylabel('objective')
    ax.set_yscale('log')
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
