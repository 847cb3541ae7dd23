"""Breakpoint grid for the squared upper bound and the sector table."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class PwlGrid:
    B: float
    S: int

    @property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(-self.B, self.B, self.S)

    @property
    def squares(self) -> np.ndarray:
        return self.breakpoints ** 2

    @property
    def spacing(self) -> float:
        return 2 * self.B / (self.S - 1)

    @property
    def max_gap(self) -> float:
        """Largest overestimate of the chord interpolant, ``B^2/(S-1)^2``."""
        return self.B ** 2 / (self.S - 1) ** 2

    def weights(self, value: float) -> np.ndarray:
        """Adjacent-pair interpolation weights representing ``value``."""
        a = self.breakpoints
        v = min(max(float(value), -self.B), self.B)
        lam = np.zeros(self.S)
        s = int(np.searchsorted(a, v, side='right')) - 1
        s = min(max(s, 0), self.S - 2)
        t = (v - a[s]) / (a[s + 1] - a[s])
        lam[s], lam[s + 1] = 1.0 - t, t
        return lam

    def upper(self, value: float) -> float:
        return float(self.weights(value) @ self.squares)


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class SectorTable:
    """``2S`` overlapping wedges of width ``2*pi/S`` offset by ``pi/S``.

    Wedge ``l`` spans directions ``[l*pi/S, l*pi/S + 2*pi/S]``.  ``right[l]``
    and ``left[l]`` are the unit normals with ``<left, d> >= 0`` and
    ``<right, d> <= 0`` exactly inside the wedge; ``left_eps[l]`` and
    ``right_pi[l]`` are the rotated normals restricting the second parent
    vector to at least ``epsilon`` counter-clockwise of the wedge.
    """

    S: int
    epsilon: float

    @property
    def count(self) -> int:
        return 2 * self.S

    @property
    def starts(self) -> np.ndarray:
        return np.arange(2 * self.S) * math.pi / self.S

    @property
    def width(self) -> float:
        return 2 * math.pi / self.S

    @property
    def right(self) -> np.ndarray:
        a = self.starts
        return np.stack([np.sin(a), -np.cos(a)], axis=1)

    @property
    def left(self) -> np.ndarray:
        a = self.starts + self.width
        return np.stack([np.sin(a), -np.cos(a)], axis=1)

    @property
    def left_eps(self) -> np.ndarray:
        return self.left @ rot(self.epsilon).T

    @property
    def right_pi(self) -> np.ndarray:
        return self.right @ rot(math.pi).T

    def margins(self, d1, d2) -> np.ndarray:
        """Signed slack of the four sector inequalities, shape ``(2S, 4)``.

        All four entries non-negative means the wedge admits ``(d1, d2)``.
        """
        d1 = np.asarray(d1, dtype=float)
        d2 = np.asarray(d2, dtype=float)
        return np.stack([
            self.left @ d1,
            -(self.right @ d1),
            -(self.left_eps @ d2),
            self.right_pi @ d2,
        ], axis=1)

    def admitting(self, d1, d2, tol: float = 0.0) -> list[int]:
        m = self.margins(d1, d2)
        return [int(l) for l in np.nonzero(np.all(m >= -tol, axis=1))[0]]
