"""Independent feasibility re-evaluation of a full variable assignment.

Deliberately written as plain loops over the model's constraint objects so it
shares nothing with the vectorised bookkeeping of the relaxation solver.
"""
from __future__ import annotations

from .ir import BINARY, MicpModel

CLASSES = ('bound', 'linear', 'integrality', 'sos', 'quad')


def _dot(terms, x) -> float:
    total = 0.0
    for i, c in terms:
        total += c * x[i]
    return total


def sos_violation(kind: int, values) -> float:
    """Mass outside the best admissible support (one member, or two adjacent)."""
    mags = [abs(v) for v in values]
    total = sum(mags)
    if kind == 1:
        return total - max(mags, default=0.0)
    best = max((mags[s] + mags[s + 1] for s in range(len(mags) - 1)), default=total)
    return total - best


def check_assignment(model: MicpModel, x, tol: float = 0.0,
                     by_constraint: bool = False) -> dict:
    """Worst violation per constraint class.

    With ``by_constraint`` the result also carries ``'violated'``: names of the
    individual constraints whose violation exceeds ``tol``.
    """
    if len(x) != model.n:
        raise ValueError(f'assignment has {len(x)} entries, model has {model.n} variables')
    worst = dict.fromkeys(CLASSES, 0.0)
    violated: list[str] = []

    def note(cls, amount, name):
        if amount > worst[cls]:
            worst[cls] = amount
        if by_constraint and amount > tol:
            violated.append(name)

    for i, v in enumerate(model.variables):
        xi = float(x[i])
        note('bound', max(v.lb - xi, xi - v.ub, 0.0), v.name)
        if v.kind == BINARY:
            note('integrality', abs(xi - round(xi)), v.name)
    for con in model.linear_constraints:
        lhs = _dot(con.terms, x)
        if con.sense == '<=':
            amount = lhs - con.rhs
        elif con.sense == '>=':
            amount = con.rhs - lhs
        else:
            amount = abs(lhs - con.rhs)
        note('linear', max(amount, 0.0), con.name)
    for sos in model.sos_sets:
        note('sos', sos_violation(sos.kind, [x[m] for m in sos.members]), sos.name)
    for con in model.quad_constraints:
        lhs = 0.0
        for row in con.rows:
            r = _dot(row.terms, x) + row.const
            lhs += r * r
        rhs = _dot(con.rhs_terms, x) + con.rhs_const
        note('quad', max(lhs - rhs, 0.0), con.name)
    if by_constraint:
        worst['violated'] = violated
    return worst


def is_feasible(report: dict, linear_tol: float = 1e-9, quad_tol: float = 1e-7) -> bool:
    return (report['bound'] <= linear_tol and report['linear'] <= linear_tol
            and report['integrality'] == 0.0 and report['sos'] <= linear_tol
            and report['quad'] <= quad_tol)
