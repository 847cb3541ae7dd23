"""Solver-agnostic mixed-integer convex program.

Quadratic pieces are kept in sum-of-squares form: a constraint
``sum_r (a_r.x + b_r)^2 <= c.x + e`` is convex by construction, and so is an
objective ``sum_r (a_r.x + b_r)^2 + c.x + k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp

CONTINUOUS = 'C'
BINARY = 'B'
SENSES = ('<=', '=', '>=')

Terms = tuple[tuple[int, float], ...]


def canonical_terms(terms: Iterable[tuple[int, float]]) -> Terms:
    """Merge duplicate indices, drop zeros, sort by variable index."""
    acc: dict[int, float] = {}
    for idx, coef in terms:
        acc[int(idx)] = acc.get(int(idx), 0.0) + float(coef)
    return tuple((i, c) for i, c in sorted(acc.items()) if c != 0.0)


@dataclass(frozen=True)
class Variable:
    name: str
    lb: float
    ub: float
    kind: str = CONTINUOUS


@dataclass(frozen=True)
class LinearConstraint:
    terms: Terms
    sense: str
    rhs: float
    name: str
    family: str = ''


@dataclass(frozen=True)
class SOSSet:
    kind: int
    members: tuple[int, ...]
    name: str
    family: str = ''


@dataclass(frozen=True)
class AffineRow:
    terms: Terms
    const: float = 0.0

    def value(self, x) -> float:
        return sum(c * x[i] for i, c in self.terms) + self.const


@dataclass(frozen=True)
class QuadConstraint:
    rows: tuple[AffineRow, ...]
    rhs_terms: Terms
    rhs_const: float
    name: str
    family: str = ''


@dataclass(frozen=True)
class Objective:
    squares: tuple[AffineRow, ...] = ()
    linear: Terms = ()
    constant: float = 0.0


@dataclass
class MicpModel:
    variables: list[Variable] = field(default_factory=list)
    linear_constraints: list[LinearConstraint] = field(default_factory=list)
    sos_sets: list[SOSSet] = field(default_factory=list)
    quad_constraints: list[QuadConstraint] = field(default_factory=list)
    objective: Objective = field(default_factory=Objective)
    name: str = 'linkforge'

    # -- building -----------------------------------------------------------
    def add_var(self, name: str, lb: float, ub: float, kind: str = CONTINUOUS) -> int:
        if not (math.isfinite(lb) and math.isfinite(ub)):
            raise ValueError(f'variable {name} needs finite bounds')
        if lb > ub:
            raise ValueError(f'variable {name} has lb > ub')
        self.variables.append(Variable(name, float(lb), float(ub), kind))
        return len(self.variables) - 1

    def add_linear(self, terms, sense: str, rhs: float, name: str, family: str = '') -> int:
        if sense not in SENSES:
            raise ValueError(f'unknown sense {sense!r}')
        self.linear_constraints.append(
            LinearConstraint(canonical_terms(terms), sense, float(rhs), name, family))
        return len(self.linear_constraints) - 1

    def add_sos(self, kind: int, members, name: str, family: str = '') -> int:
        members = tuple(int(m) for m in members)
        if kind not in (1, 2):
            raise ValueError('SOS kind must be 1 or 2')
        if kind == 2 and len(members) < 3:
            raise ValueError('SOS2 sets need at least 3 members')
        self.sos_sets.append(SOSSet(kind, members, name, family))
        return len(self.sos_sets) - 1

    def add_quad(self, rows, rhs_terms, rhs_const: float, name: str, family: str = '') -> int:
        rows = tuple(AffineRow(canonical_terms(r.terms), float(r.const)) for r in rows)
        self.quad_constraints.append(
            QuadConstraint(rows, canonical_terms(rhs_terms), float(rhs_const), name, family))
        return len(self.quad_constraints) - 1

    def set_objective(self, squares=(), linear=(), constant: float = 0.0) -> None:
        squares = tuple(AffineRow(canonical_terms(r.terms), float(r.const)) for r in squares)
        self.objective = Objective(squares, canonical_terms(linear), float(constant))

    def fix(self, idx: int, value: float) -> None:
        v = self.variables[idx]
        self.variables[idx] = Variable(v.name, float(value), float(value), v.kind)

    def set_bounds(self, idx: int, lb: float | None = None, ub: float | None = None) -> None:
        v = self.variables[idx]
        self.variables[idx] = Variable(v.name, v.lb if lb is None else float(lb),
                                       v.ub if ub is None else float(ub), v.kind)

    def copy(self) -> 'MicpModel':
        return MicpModel(list(self.variables), list(self.linear_constraints), list(self.sos_sets),
                         list(self.quad_constraints), self.objective, self.name)

    # -- inspection ---------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def lb(self) -> np.ndarray:
        return np.array([v.lb for v in self.variables])

    @property
    def ub(self) -> np.ndarray:
        return np.array([v.ub for v in self.variables])

    @property
    def binaries(self) -> np.ndarray:
        return np.array([i for i, v in enumerate(self.variables) if v.kind == BINARY], dtype=int)

    def var_index(self, name: str) -> int:
        for i, v in enumerate(self.variables):
            if v.name == name:
                return i
        raise KeyError(name)

    def count(self, family: str) -> dict[str, int]:
        return {
            'linear': sum(c.family == family for c in self.linear_constraints),
            'quad': sum(c.family == family for c in self.quad_constraints),
            'sos': sum(s.family == family for s in self.sos_sets),
        }

    def linear_matrix(self):
        """Rows as ``(A, lo, hi)`` with ``lo <= A x <= hi``; A in CSR."""
        rows, cols, vals = [], [], []
        lo = np.empty(len(self.linear_constraints))
        hi = np.empty(len(self.linear_constraints))
        for r, con in enumerate(self.linear_constraints):
            for i, c in con.terms:
                rows.append(r)
                cols.append(i)
                vals.append(c)
            lo[r] = con.rhs if con.sense in ('=', '>=') else -np.inf
            hi[r] = con.rhs if con.sense in ('=', '<=') else np.inf
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(self.linear_constraints), self.n))
        return A, lo, hi

    def objective_value(self, x) -> float:
        obj = self.objective
        val = obj.constant + sum(c * x[i] for i, c in obj.linear)
        return float(val + sum(r.value(x) ** 2 for r in obj.squares))

    def __eq__(self, other):
        if not isinstance(other, MicpModel):
            return NotImplemented
        return (self.variables == other.variables
                and self.linear_constraints == other.linear_constraints
                and self.sos_sets == other.sos_sets
                and self.quad_constraints == other.quad_constraints
                and self.objective == other.objective
                and self.name == other.name)
