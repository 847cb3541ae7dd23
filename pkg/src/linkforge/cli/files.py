"""JSON problem and design files.

Schema errors are reported with the line and column of the offending value,
which needs a position map of the document; ``_locate`` builds one by walking
the text with the stdlib decoder.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from ..core import (LinkageDesign, Motor, Normalization, ProblemSpec, SpecError, Topology,
                    Trajectory, UserConstraints, normalize_target)

_point = {'type': 'array', 'items': {'type': 'number'}, 'minItems': 2, 'maxItems': 2}
_maybe_number = {'type': ['number', 'null']}

PROBLEM_SCHEMA = {
    'type': 'object',
    'additionalProperties': False,
    'required': ['target'],
    'properties': {
        'target': {'type': 'array', 'items': _point, 'minItems': 3},
        'K': {'type': 'integer', 'minimum': 3},
        'S': {'type': 'integer', 'minimum': 3},
        'T': {'type': 'integer', 'minimum': 3},
        'B': {'type': 'number', 'exclusiveMinimum': 0},
        'l_min': {'type': 'number', 'exclusiveMinimum': 0},
        'epsilon': {'type': 'number', 'exclusiveMinimum': 0},
        'w': {'type': 'number', 'minimum': 0},
        'mip_gap': {'type': 'number', 'minimum': 0},
        'time_limit_s': {'type': 'number', 'exclusiveMinimum': 0},
        'seed': {'type': 'integer'},
        'constraints': {
            'type': 'object',
            'additionalProperties': False,
            'properties': {
                'motor_center': _point,
                'fixed_nodes': {'type': 'array', 'items': {
                    'type': 'object', 'additionalProperties': False,
                    'required': ['index', 'position'],
                    'properties': {'index': {'type': 'integer'}, 'position': _point}}},
                'containment_polygon': {'type': 'array', 'items': _point, 'minItems': 3},
            },
        },
    },
}

_node = {
    'type': 'object',
    'additionalProperties': False,
    'required': ['index', 'role', 'parents', 'rod_lengths', 'position'],
    'properties': {
        'index': {'type': 'integer', 'minimum': 0},
        'role': {'enum': ['motor', 'fixed', 'movable', 'end_effector']},
        'parents': {'oneOf': [{'type': 'null'}, {'type': 'array', 'items': {'type': 'integer'},
                                                 'minItems': 2, 'maxItems': 2}]},
        'rod_lengths': {'oneOf': [{'type': 'null'}, {'type': 'array', 'items': {'type': 'number'},
                                                     'minItems': 2, 'maxItems': 2}]},
        'position': {'oneOf': [{'type': 'null'}, _point]},
    },
}

DESIGN_SCHEMA = {
    'type': 'object',
    'additionalProperties': False,
    'required': ['status', 'refined', 'verified', 'nodes', 'motor', 'trajectory', 'objective',
                 'lower_bound', 'gap', 'stats', 'normalization', 'problem'],
    'properties': {
        'status': {'type': 'string'},
        'refined': {'type': 'boolean'},
        'verified': {'type': 'boolean'},
        'nodes': {'type': 'array', 'items': _node, 'minItems': 3},
        'motor': {
            'type': 'object', 'additionalProperties': False,
            'required': ['center', 'radius', 'direction', 'phase'],
            'properties': {'center': _point, 'radius': {'type': 'number'},
                           'direction': {'enum': [0, 1]}, 'phase': {'type': 'number'}},
        },
        'trajectory': {'type': 'array', 'items': {'type': 'array', 'items': _point}},
        'objective': _maybe_number,
        'lower_bound': _maybe_number,
        'gap': _maybe_number,
        'stats': {'type': 'object'},
        'normalization': {
            'type': 'object', 'additionalProperties': False, 'required': ['scale', 'offset'],
            'properties': {'scale': {'type': 'number'}, 'offset': _point},
        },
        'problem': PROBLEM_SCHEMA,
    },
}


class FileError(ValueError):
    """A problem with an input file, located when possible."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 source: str = '<input>'):
        self.line, self.column, self.source = line, column, source
        where = source if line is None else f'{source}:{line}:{column}'
        super().__init__(f'{where}: {message}')


# --- locating values in JSON text ---------------------------------------------------------

_decoder = json.JSONDecoder()
_WS = ' \t\n\r'


def _skip(text: str, i: int) -> int:
    while i < len(text) and text[i] in _WS:
        i += 1
    return i


def _locate(text: str) -> dict[tuple, int]:
    """Character offset of every value, keyed by its path."""
    where: dict[tuple, int] = {}

    def walk(i: int, path: tuple) -> int:
        i = _skip(text, i)
        where[path] = i
        if text[i] == '{':
            i = _skip(text, i + 1)
            if text[i] == '}':
                return i + 1
            while True:
                key, i = _decoder.raw_decode(text, _skip(text, i))
                i = _skip(text, i) + 1              # ':'
                i = _skip(text, walk(i, path + (key,)))
                if text[i] == '}':
                    return i + 1
                i += 1                               # ','
        if text[i] == '[':
            i = _skip(text, i + 1)
            if text[i] == ']':
                return i + 1
            k = 0
            while True:
                i = _skip(text, walk(i, path + (k,)))
                k += 1
                if text[i] == ']':
                    return i + 1
                i += 1
        _, end = _decoder.raw_decode(text, i)
        return end

    walk(0, ())
    return where


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count('\n', 0, offset) + 1
    return line, offset - (text.rfind('\n', 0, offset) + 1) + 1


def load_json(text: str, schema: dict, source: str = '<input>') -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileError(exc.msg, exc.lineno, exc.colno, source) from None
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc),
                    key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        path = tuple(err.absolute_path)
        where = _locate(text)
        # the deepest located ancestor of the failing value
        while path not in where:
            path = path[:-1]
        line, col = _line_col(text, where[path])
        loc = '/'.join(map(str, err.absolute_path)) or '(root)'
        raise FileError(f'{loc}: {err.message}', line, col, source)
    return doc


# --- problem files ------------------------------------------------------------------------

@dataclass
class Problem:
    spec: ProblemSpec                 # normalized coordinates
    normalization: Normalization
    document: dict                    # the file as given


def problem_from_doc(doc: dict, seed: int | None = None, source: str = '<input>',
                     normalize: bool = True) -> Problem:
    norm = normalize_target(doc['target'], doc.get('B', 1.0)) if normalize else Normalization()
    c = doc.get('constraints', {})
    kw = {k: doc[k] for k in ('K', 'S', 'T', 'B', 'l_min', 'epsilon', 'w', 'mip_gap', 'seed')
          if k in doc}
    if 'time_limit_s' in doc:
        kw['time_limit'] = doc['time_limit_s']
    if seed is not None:
        kw['seed'] = seed
    try:
        uc = UserConstraints(
            motor_center=None if 'motor_center' not in c else _pt(norm.apply(c['motor_center'])),
            fixed_nodes=tuple((int(f['index']), _pt(norm.apply(f['position'])))
                              for f in c.get('fixed_nodes', ())),
            containment_polygon=None if 'containment_polygon' not in c else tuple(
                _pt(p) for p in norm.apply(c['containment_polygon'])),
        )
        spec = ProblemSpec(target=tuple(_pt(p) for p in norm.apply(doc['target'])),
                           user_constraints=uc, **kw)
    except SpecError as exc:
        raise FileError(str(exc), source=source) from None
    return Problem(spec, norm, doc)


def read_problem(path: str, seed: int | None = None) -> Problem:
    with open(path) as fh:
        text = fh.read()
    return problem_from_doc(load_json(text, PROBLEM_SCHEMA, path), seed, path)


def spec_to_doc(spec: ProblemSpec) -> dict:
    """ProblemFile document for a (normalized) spec."""
    doc = {'target': [list(p) for p in spec.target], 'K': spec.K, 'S': spec.S, 'T': spec.T,
           'B': spec.B, 'l_min': spec.l_min, 'epsilon': spec.epsilon, 'w': spec.w,
           'mip_gap': spec.mip_gap, 'time_limit_s': spec.time_limit, 'seed': spec.seed}
    uc = spec.user_constraints
    c = {}
    if uc.motor_center is not None:
        c['motor_center'] = list(uc.motor_center)
    if uc.fixed_nodes:
        c['fixed_nodes'] = [{'index': i, 'position': list(p)} for i, p in uc.fixed_nodes]
    if uc.containment_polygon is not None:
        c['containment_polygon'] = [list(p) for p in uc.containment_polygon]
    if c:
        doc['constraints'] = c
    return doc


def _pt(p) -> tuple[float, float]:
    return (float(p[0]), float(p[1]))


# --- design files -------------------------------------------------------------------------

@dataclass
class DesignRecord:
    design: LinkageDesign
    trajectory: Trajectory
    spec: ProblemSpec
    normalization: Normalization = field(default_factory=Normalization)
    status: str = 'unknown'
    refined: bool = True
    verified: bool = False
    objective: float | None = None
    lower_bound: float | None = None
    gap: float | None = None
    stats: dict = field(default_factory=dict)


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def design_to_doc(rec: DesignRecord) -> dict:
    d = rec.design
    topo = d.topology
    nodes = []
    for i in range(d.K):
        role = ('motor' if i == 0 else 'end_effector' if i == d.K - 1
                else 'fixed' if topo.fixed[i] else 'movable')
        nodes.append({
            'index': i,
            'role': role,
            'parents': None if topo.parents[i] is None else list(topo.parents[i]),
            'rod_lengths': None if d.rod_lengths[i] is None else list(map(float, d.rod_lengths[i])),
            'position': None if d.fixed_positions[i] is None else list(map(float, d.fixed_positions[i])),
        })
    return {
        'status': rec.status,
        'refined': rec.refined,
        'verified': rec.verified,
        'nodes': nodes,
        'motor': {'center': list(map(float, d.motor.center)), 'radius': float(d.motor.radius),
                  'direction': topo.direction, 'phase': float(d.motor.phase)},
        'trajectory': rec.trajectory.positions.tolist(),
        'objective': _num(rec.objective),
        'lower_bound': _num(rec.lower_bound),
        'gap': _num(rec.gap),
        'stats': rec.stats,
        'normalization': {'scale': float(rec.normalization.scale),
                          'offset': list(map(float, rec.normalization.offset))},
        'problem': spec_to_doc(rec.spec),
    }


def dumps(doc: dict) -> str:
    """Stable text: fixed key order, shortest round-trip floats."""
    return json.dumps(doc, indent=2, allow_nan=False) + '\n'


def design_from_doc(doc: dict, source: str = '<input>') -> DesignRecord:
    nodes = sorted(doc['nodes'], key=lambda n: n['index'])
    if [n['index'] for n in nodes] != list(range(len(nodes))):
        raise FileError('node indices must be 0..n-1', source=source)
    K = len(nodes)
    fixed = tuple(n['role'] == 'fixed' or (n['role'] == 'end_effector' and n['parents'] is None)
                  for n in nodes)
    m = doc['motor']
    topo = Topology((True,) * K, fixed,
                    tuple(None if n['parents'] is None else tuple(n['parents']) for n in nodes),
                    m['direction'])
    design = LinkageDesign(
        topo,
        tuple(None if n['rod_lengths'] is None else tuple(map(float, n['rod_lengths'])) for n in nodes),
        tuple(None if n['position'] is None else _pt(n['position']) for n in nodes),
        Motor(_pt(m['center']), float(m['radius']), float(m['phase'])))
    try:
        traj = Trajectory(np.asarray(doc['trajectory'], dtype=float).reshape(-1, K, 2))
        spec = problem_from_doc(doc['problem'], source=source, normalize=False).spec
    except (ValueError, SpecError) as exc:
        raise FileError(str(exc), source=source) from None
    n = doc['normalization']
    return DesignRecord(design, traj, spec, Normalization(float(n['scale']), _pt(n['offset'])),
                        doc['status'], doc['refined'], doc['verified'], doc['objective'],
                        doc['lower_bound'], doc['gap'], dict(doc['stats']))


def read_design(path: str) -> DesignRecord:
    with open(path) as fh:
        text = fh.read()
    return design_from_doc(load_json(text, DESIGN_SCHEMA, path), path)


def write_text(path: str, text: str) -> None:
    with open(path, 'w', newline='\n') as fh:
        fh.write(text)
