"""MPS-style text export of a :class:`MicpModel`, and the matching parser.

Layout (free MPS, ASCII, LF endings; one token per whitespace-separated field)::

    NAME          <model name>
    * variables <n> rows <m> sos <s> quad <q> squares <r>
    ROWS           N OBJ, then L/E/G <row>
    COLUMNS        column-major nonzeros, binaries between INTORG/INTEND markers
    RHS            only nonzero right-hand sides
    BOUNDS         LO and UP for every column, or FX when lb == ub
    SOS            "S1 SOS <name> <family>" / "S2 ...", then "<col> <position>"
    QCONSTRAINTS   extension, see below
    OBJSQUARES     extension, see below
    ENDATA

Extensions.  A quadratic constraint ``sum_r (a_r.x + b_r)^2 <= c.x + e`` is
written as::

    QC <name> <family> <nrows> <rhs_const>
        RHS <col> <coef>          (one line per term of c)
        SQ <const>                (starts row r with b_r)
        <col> <coef>              (terms of a_r)

and the objective's squared terms as ``SQ``/term blocks under OBJSQUARES.
The objective constant, when nonzero, is the RHS entry of row OBJ negated as
in classic MPS.  Row families are kept in a ``ROWFAMILY`` section so the
model round-trips exactly.  Floats use Python's shortest round-trip repr.
"""
from __future__ import annotations

import math
from collections import defaultdict

from .ir import BINARY, CONTINUOUS, AffineRow, MicpModel

_SENSE_CODE = {'<=': 'L', '=': 'E', '>=': 'G'}
_CODE_SENSE = {v: k for k, v in _SENSE_CODE.items()}


def _f(v: float) -> str:
    return repr(float(v))


def export_model(model: MicpModel, sos_encoding: str = 'native') -> str:
    """Serialise ``model``.

    ``sos_encoding='log'`` first rewrites every SOS set with the logarithmic
    binary formulation for MILP solvers without native SOS support; that
    output parses back into the rewritten model, not the original.
    """
    if sos_encoding == 'log':
        model = log_encode_sos(model)
    elif sos_encoding != 'native':
        raise ValueError(f'unknown sos encoding {sos_encoding!r}')
    out = [f'NAME          {model.name}',
           f'* variables {model.n} rows {len(model.linear_constraints)} sos {len(model.sos_sets)}'
           f' quad {len(model.quad_constraints)} squares {len(model.objective.squares)}',
           'ROWS', ' N  OBJ']
    for con in model.linear_constraints:
        out.append(f' {_SENSE_CODE[con.sense]}  {con.name}')
    cols = defaultdict(list)
    for i, c in model.objective.linear:
        cols[i].append(('OBJ', c))
    for con in model.linear_constraints:
        for i, c in con.terms:
            cols[i].append((con.name, c))
    out.append('COLUMNS')
    in_int = False
    marker = 0
    for i, v in enumerate(model.variables):
        is_int = v.kind == BINARY
        if is_int != in_int:
            tag = 'INTORG' if is_int else 'INTEND'
            out.append(f"    MARKER{marker:06d}  'MARKER'  '{tag}'")
            marker += 1
            in_int = is_int
        entries = cols.get(i)
        if not entries:
            out.append(f'    {v.name}  OBJ  0.0')
        for row, c in entries or ():
            out.append(f'    {v.name}  {row}  {_f(c)}')
    if in_int:
        out.append(f"    MARKER{marker:06d}  'MARKER'  'INTEND'")
    out.append('RHS')
    if model.objective.constant != 0.0:
        out.append(f'    RHS  OBJ  {_f(-model.objective.constant)}')
    for con in model.linear_constraints:
        if con.rhs != 0.0:
            out.append(f'    RHS  {con.name}  {_f(con.rhs)}')
    out.append('BOUNDS')
    for v in model.variables:
        if v.lb == v.ub:
            out.append(f' FX BND  {v.name}  {_f(v.lb)}')
        else:
            out.append(f' LO BND  {v.name}  {_f(v.lb)}')
            out.append(f' UP BND  {v.name}  {_f(v.ub)}')
    names = [v.name for v in model.variables]
    out.append('SOS')
    for s in model.sos_sets:
        out.append(f' S{s.kind} SOS  {s.name}  {s.family or "-"}')
        for pos, m in enumerate(s.members, start=1):
            out.append(f'    {names[m]}  {pos}')
    out.append('QCONSTRAINTS')
    for q in model.quad_constraints:
        out.append(f' QC {q.name}  {q.family or "-"}  {len(q.rows)}  {_f(q.rhs_const)}')
        for i, c in q.rhs_terms:
            out.append(f'    RHS  {names[i]}  {_f(c)}')
        _rows(out, q.rows, names)
    out.append('OBJSQUARES')
    _rows(out, model.objective.squares, names)
    out.append('ROWFAMILY')
    for con in model.linear_constraints:
        out.append(f'    {con.name}  {con.family or "-"}')
    out.append('ENDATA')
    return '\n'.join(out) + '\n'


def _rows(out, rows, names):
    for r in rows:
        out.append(f'    SQ  {_f(r.const)}')
        for i, c in r.terms:
            out.append(f'    {names[i]}  {_f(c)}')


class MpsParseError(ValueError):
    pass


def parse_model(text: str) -> MicpModel:
    lines = text.split('\n')
    section = None
    name = 'linkforge'
    row_order: list[str] = []
    row_sense: dict[str, str] = {}
    row_terms: dict[str, list] = defaultdict(list)
    row_rhs: dict[str, float] = {}
    row_family: dict[str, str] = {}
    var_names: list[str] = []
    var_index: dict[str, int] = {}
    var_kind: dict[str, str] = {}
    var_line: dict[str, int] = {}
    bounds: dict[str, list] = {}
    obj_linear: list = []
    obj_const = 0.0
    sos_sets: list = []
    quads: list = []
    squares: list = []
    in_int = False
    current_rows = None

    def col(n):
        if n not in var_index:
            raise MpsParseError(f'unknown column {n}')
        return var_index[n]

    for lineno, line in enumerate(lines, start=1):
        if not line or line.startswith('*'):
            continue
        tok = line.split()
        if not line.startswith(' '):
            section = tok[0]
            if section == 'NAME':
                name = tok[1] if len(tok) > 1 else ''
            elif section == 'ENDATA':
                break
            elif section not in ('ROWS', 'COLUMNS', 'RHS', 'BOUNDS', 'SOS', 'QCONSTRAINTS',
                                 'OBJSQUARES', 'ROWFAMILY'):
                raise MpsParseError(f'line {lineno}: unknown section {section}')
            continue
        try:
            if section == 'ROWS':
                code, rname = tok
                if code == 'N':
                    continue
                row_order.append(rname)
                row_sense[rname] = _CODE_SENSE[code]
            elif section == 'COLUMNS':
                if len(tok) == 3 and tok[1] == "'MARKER'":
                    in_int = tok[2] == "'INTORG'"
                    continue
                cname, rname, val = tok
                if rname != 'OBJ' and rname not in row_sense:
                    raise MpsParseError(f'unknown row {rname}')
                if cname not in var_index:
                    var_line[cname] = lineno
                    var_index[cname] = len(var_names)
                    var_names.append(cname)
                    var_kind[cname] = BINARY if in_int else CONTINUOUS
                v = float(val)
                if rname == 'OBJ':
                    if v != 0.0 or val != '0.0':
                        obj_linear.append((var_index[cname], v))
                else:
                    row_terms[rname].append((var_index[cname], v))
            elif section == 'RHS':
                _, rname, val = tok
                if rname == 'OBJ':
                    obj_const = -float(val)
                else:
                    row_rhs[rname] = float(val)
            elif section == 'BOUNDS':
                code, _, cname, val = tok
                b = bounds.setdefault(cname, [None, None])
                if code == 'FX':
                    b[0] = b[1] = float(val)
                elif code == 'LO':
                    b[0] = float(val)
                elif code == 'UP':
                    b[1] = float(val)
                else:
                    raise MpsParseError(f'line {lineno}: unsupported bound type {code}')
            elif section == 'SOS':
                if tok[0] in ('S1', 'S2'):
                    fam = '' if tok[3] == '-' else tok[3]
                    sos_sets.append([int(tok[0][1]), [], tok[2], fam])
                else:
                    sos_sets[-1][1].append(col(tok[0]))
            elif section == 'QCONSTRAINTS':
                if tok[0] == 'QC':
                    fam = '' if tok[2] == '-' else tok[2]
                    current_rows = []
                    quads.append([current_rows, [], float(tok[4]), tok[1], fam])
                elif tok[0] == 'RHS':
                    quads[-1][1].append((col(tok[1]), float(tok[2])))
                elif tok[0] == 'SQ':
                    current_rows.append([[], float(tok[1])])
                else:
                    current_rows[-1][0].append((col(tok[0]), float(tok[1])))
            elif section == 'OBJSQUARES':
                if tok[0] == 'SQ':
                    squares.append([[], float(tok[1])])
                else:
                    squares[-1][0].append((col(tok[0]), float(tok[1])))
            elif section == 'ROWFAMILY':
                row_family[tok[0]] = '' if tok[1] == '-' else tok[1]
        except MpsParseError as exc:
            if str(exc).startswith('line '):
                raise
            raise MpsParseError(f'line {lineno}: {exc}') from exc
        except (ValueError, IndexError, KeyError) as exc:
            raise MpsParseError(f'line {lineno}: {exc}') from exc

    model = MicpModel(name=name)
    for n in var_names:
        lb, ub = bounds.get(n, [0.0, math.inf])
        if lb is None or ub is None or not (math.isfinite(lb) and math.isfinite(ub)):
            raise MpsParseError(f'line {var_line[n]}: column {n} has no finite bounds')
        model.add_var(n, lb, ub, var_kind[n])
    for r in row_order:
        model.add_linear(row_terms[r], row_sense[r], row_rhs.get(r, 0.0), r, row_family.get(r, ''))
    for kind, members, sname, fam in sos_sets:
        model.add_sos(kind, members, sname, fam)
    for rows, rhs_terms, rhs_const, qname, fam in quads:
        model.add_quad([AffineRow(tuple(t), c) for t, c in rows], rhs_terms, rhs_const, qname, fam)
    model.set_objective([AffineRow(tuple(t), c) for t, c in squares], obj_linear, obj_const)
    return model


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def log_encode_sos(model: MicpModel) -> MicpModel:
    """Replace every SOS set by ``ceil(log2)`` binaries and linear rows.

    SOS1 uses a plain binary code per member; SOS2 a reflected Gray code per
    segment, admitting a breakpoint under a code bit only if every segment
    touching it agrees on that bit.
    """
    out = model.copy()
    out.sos_sets = []
    for s in model.sos_sets:
        m = list(s.members)
        if s.kind == 1:
            codes = [[j] for j in range(len(m))]
            nbits = max(1, math.ceil(math.log2(len(m))))
        else:
            nseg = len(m) - 1
            nbits = max(1, math.ceil(math.log2(nseg)))
            codes = []
            for j in range(len(m)):
                segs = [t for t in (j - 1, j) if 0 <= t < nseg]
                codes.append([_gray(t) for t in segs])
        for b in range(nbits):
            z = out.add_var(f'z_{s.name}[{b}]', 0, 1, BINARY)
            ones = [m[j] for j, cs in enumerate(codes) if all((c >> b) & 1 for c in cs)]
            zeros = [m[j] for j, cs in enumerate(codes) if all(not (c >> b) & 1 for c in cs)]
            out.add_linear([(v, 1.0) for v in ones] + [(z, -1.0)], '<=', 0.0,
                           f'log1_{s.name}[{b}]', 'sos_log')
            out.add_linear([(v, 1.0) for v in zeros] + [(z, 1.0)], '<=', 1.0,
                           f'log0_{s.name}[{b}]', 'sos_log')
    return out
