"""Deterministic SVG drawings of a design and its coupler curve."""
from __future__ import annotations

import numpy as np

from ..core import LinkageDesign, Trajectory

EE_COLOR = '#1f5fd6'        # end-effector trajectory: blue
TARGET_COLOR = '#f2c200'    # target trajectory: yellow
ROD_COLOR = '#333333'
SIZE = 480


def _f(v: float) -> str:
    s = f'{v:.4f}'
    return '0.0000' if s == '-0.0000' else s


class _Canvas:
    def __init__(self, extent: float):
        self.extent = extent
        self.scale = SIZE / (2 * extent)

    def xy(self, p) -> str:
        x = (p[0] + self.extent) * self.scale
        y = (self.extent - p[1]) * self.scale   # SVG y grows downwards
        return f'{_f(x)},{_f(y)}'

    def path(self, pts, closed: bool) -> str:
        d = 'M ' + ' L '.join(self.xy(p) for p in pts)
        return d + (' Z' if closed else '')


def render_svg(design: LinkageDesign, traj: Trajectory, target=None, frame: int = 0,
               extent: float | None = None) -> str:
    """Rods at pose ``frame``, the closed coupler curve, the target and the motor circle."""
    P = traj.positions
    tgt = None if target is None or len(target) == 0 else np.asarray(target, dtype=float)
    if extent is None:
        pts = [P.reshape(-1, 2), np.atleast_2d(design.motor.center)]
        if tgt is not None:
            pts.append(tgt)
        extent = max(1.0, float(np.max(np.abs(np.concatenate(pts))))) * 1.05
    c = _Canvas(extent)
    topo = design.topology
    pose = P[frame % len(P)]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
           f'viewBox="0 0 {SIZE} {SIZE}">',
           f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>']
    center = design.motor.center
    out.append(f'<circle class="motor" cx="{c.xy(center).split(",")[0]}" '
               f'cy="{c.xy(center).split(",")[1]}" r="{_f(design.motor.radius * c.scale)}" '
               f'fill="none" stroke="#999999" stroke-dasharray="4 3"/>')
    if tgt is not None:
        out.append(f'<path class="target" d="{c.path(tgt, True)}" fill="none" '
                   f'stroke="{TARGET_COLOR}" stroke-width="3"/>')
    out.append(f'<path class="coupler" d="{c.path(P[:, -1], True)}" fill="none" '
               f'stroke="{EE_COLOR}" stroke-width="2"/>')
    out.append(f'<polyline class="rod" points="{c.xy(center)} {c.xy(pose[0])}" '
               f'stroke="{ROD_COLOR}" stroke-width="2" fill="none"/>')
    for i in range(1, design.K):
        if topo.movable(i):
            for j in topo.parents[i]:
                out.append(f'<polyline class="rod" points="{c.xy(pose[j])} {c.xy(pose[i])}" '
                           f'stroke="{ROD_COLOR}" stroke-width="2" fill="none"/>')
    for i in range(design.K):
        x, y = c.xy(pose[i]).split(',')
        if i > 0 and topo.used[i] and topo.fixed[i]:
            out.append(f'<rect class="fixed" x="{_f(float(x) - 5)}" y="{_f(float(y) - 5)}" '
                       f'width="10" height="10" fill="#444444"/>')
        else:
            fill = EE_COLOR if i == design.K - 1 else 'white'
            out.append(f'<circle class="joint" cx="{x}" cy="{y}" r="3.5" fill="{fill}" '
                       f'stroke="{ROD_COLOR}"/>')
    x, y = c.xy(center).split(',')
    out.append(f'<circle class="motor-center" cx="{x}" cy="{y}" r="5" fill="#cc3333"/>')
    out.append('</svg>')
    return '\n'.join(out) + '\n'


def rod_count(design: LinkageDesign) -> int:
    """Crank plus two rods per movable node."""
    return 1 + sum(2 for i in range(1, design.K) if design.topology.movable(i))

