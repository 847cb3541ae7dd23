"""``linkforge`` command line.

Exit codes: 0 success (``synth``: optimal within the gap), 1 input/schema
error, 2 limit reached (``synth`` with or without an incumbent) or failed
verification, 3 infeasible.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np

from ..bb import BBParams
from ..core import ProblemSpec, enumerate_topologies
from ..kin import KinematicsError, simulate_cycle, trajectory_error, verify_design
from ..model import build_model, export_model
from ..pipeline import synthesize
from ..refine import refine
from ..sa import SaConfig, SaError, sa_search
from . import report
from .files import (DesignRecord, FileError, design_to_doc, dumps, read_design, read_problem,
                    write_text)
from .svg import render_svg

log = logging.getLogger('linkforge')

EXIT_OK, EXIT_INPUT, EXIT_LIMIT, EXIT_INFEASIBLE = 0, 1, 2, 3


def _seed_override() -> int | None:
    raw = os.environ.get('LINKFORGE_SEED')
    if raw is None or raw == '':
        return None
    try:
        return int(raw)
    except ValueError:
        raise FileError(f'LINKFORGE_SEED must be an integer, got {raw!r}') from None


def pwl_tolerance(spec: ProblemSpec) -> float:
    """Worst squared-length discrepancy the PWL overestimate allows in a raw solution."""
    return 2 * spec.B ** 2 / (spec.S - 1) ** 2


def check_record(rec: DesignRecord):
    """Verification report for a design file (relaxed for unrefined designs)."""
    spec = rec.spec
    if rec.refined:
        rep = verify_design(rec.design, spec)
        if rep.passed:
            sim = simulate_cycle(rec.design, spec.T, singular_tol=0.0)
            drift = float(np.max(np.abs(sim.positions - rec.trajectory.positions)))
            if drift > 1e-8:
                rep.failures.append(f'stored trajectory differs from simulation by {drift:.3g}')
        return rep
    tol = pwl_tolerance(spec)
    relaxed = spec.with_(l_min=math.sqrt(max(spec.l_min ** 2 - tol, 1e-12)))
    return verify_design(rec.design, relaxed, rec.trajectory, residual_tol=tol)


def _write_design(path: str, rec: DesignRecord, svg_path: str | None) -> None:
    write_text(path, dumps(design_to_doc(rec)))
    target = rec.spec.target_array
    report.plot_design(report.sidecar(path, 'png'), rec.design, rec.trajectory, target)
    if svg_path:
        write_text(svg_path, render_svg(rec.design, rec.trajectory, target))


# --- subcommands --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    prob = read_problem(args.problem, _seed_override())
    spec = prob.spec
    params = BBParams.from_spec(spec, workers=args.workers, node_limit=args.node_limit)
    if args.time_limit is not None:
        params.time_limit = args.time_limit
    res = synthesize(spec, params, do_refine=not args.no_refine)
    bb = res.bb
    out = args.output
    report.write_csv(report.sidecar(out, 'log.csv'), ['nodes', 'lower_bound', 'incumbent'], bb.log)
    report.plot_convergence(report.sidecar(out, 'convergence.png'), bb.log)
    if res.design is None:
        log.error('no feasible design (%s after %d nodes)', bb.status, bb.nodes)
        return EXIT_INFEASIBLE if bb.status == 'infeasible' else EXIT_LIMIT
    refined = not args.no_refine
    if refined:
        design, traj = res.design, res.trajectory
        objective = res.objective
    else:
        design, traj = res.raw_design, res.raw_trajectory
        objective = bb.objective
    stats = {'nodes': bb.nodes, 'incumbents': len(bb.incumbents),
             'bb_objective': bb.objective}
    if args.record_time:
        stats['wall_time_s'] = bb.elapsed
    if res.refine_report is not None:
        stats['refine'] = {'success': res.refine_report.success,
                           'objective_before': res.refine_report.objective_before,
                           'objective_after': res.refine_report.objective_after}
    rec = DesignRecord(design, traj if traj is not None else res.raw_trajectory, spec,
                       prob.normalization, bb.status, refined, False, objective,
                       bb.lower_bound, bb.gap, stats)
    rec.verified = check_record(rec).passed
    _write_design(out, rec, args.svg)
    log.info('%s: objective %.6g, bound %.6g, %d nodes, verified=%s', bb.status, objective,
             bb.lower_bound, bb.nodes, rec.verified)
    if bb.status == 'optimal':
        return EXIT_OK
    return EXIT_INFEASIBLE if bb.status == 'infeasible' else EXIT_LIMIT


def cmd_simulate(args) -> int:
    rec = read_design(args.design)
    steps = args.steps or rec.spec.T
    traj = simulate_cycle(rec.design, steps)
    out = args.output or report.sidecar(args.design, 'trajectory.csv')
    report.write_csv(out, ['sample', 'node', 'x', 'y'], report.trajectory_rows(traj))
    target = rec.spec.target_array if steps == rec.spec.T else None
    report.plot_design(report.sidecar(out, 'png'), rec.design, traj, target)
    if args.svg:
        write_text(args.svg, render_svg(rec.design, traj, target))
    return EXIT_OK


def cmd_verify(args) -> int:
    rec = read_design(args.design)
    rep = check_record(rec)
    for k, v in rep.as_dict().items():
        print(f'{k}: {v}')
    print('PASSED' if rep.passed else 'FAILED')
    return EXIT_OK if rep.passed else EXIT_LIMIT


def cmd_refine(args) -> int:
    rec = read_design(args.design)
    design, traj, rep = refine(rec.design, rec.trajectory, rec.spec)
    try:
        traj = simulate_cycle(design, rec.spec.T, singular_tol=0.0)
    except KinematicsError as exc:
        log.error('refined design does not simulate: %s', exc)
        return EXIT_LIMIT
    stats = dict(rec.stats)
    stats['refine'] = {'success': rep.success, 'objective_before': rep.objective_before,
                       'objective_after': rep.objective_after}
    new = DesignRecord(design, traj, rec.spec, rec.normalization, rec.status, True, False,
                       trajectory_error(traj, rec.spec.target_array, rec.spec.w, design.K),
                       rec.lower_bound, rec.gap, stats)
    new.verified = check_record(new).passed
    _write_design(args.output, new, args.svg)
    return EXIT_OK if new.verified else EXIT_LIMIT


def cmd_sa(args) -> int:
    prob = read_problem(args.problem, _seed_override())
    spec = prob.spec
    cfg = SaConfig(iterations=args.iterations, seed=spec.seed)
    try:
        res = sa_search(spec, cfg)
    except SaError as exc:
        log.error('%s', exc)
        return EXIT_INFEASIBLE
    traj = simulate_cycle(res.design, spec.T, singular_tol=0.0)
    rec = DesignRecord(res.design, traj, spec, prob.normalization, 'sa', True, False,
                       res.objective, None, None,
                       {'iterations': cfg.iterations, 'accepted': res.accepted})
    rec.verified = check_record(rec).passed
    _write_design(args.output, rec, args.svg)
    report.write_csv(report.sidecar(args.output, 'trace.csv'), ['iteration', 'best'], res.trace)
    report.plot_trace(report.sidecar(args.output, 'trace.png'), res.trace)
    return EXIT_OK


def cmd_export(args) -> int:
    prob = read_problem(args.problem, _seed_override())
    model, _ = build_model(prob.spec)
    text = export_model(model, args.sos_encoding)
    if args.output:
        write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_enumerate(args) -> int:
    topos = enumerate_topologies(args.k)
    print(len(topos))
    if args.list:
        for t in topos:
            print(' '.join('M' if i == 0 else '-' if not t.used[i] else 'F' if t.fixed[i]
                           else f'{t.parents[i][0]}{t.parents[i][1]}' for i in range(args.k)))
    return EXIT_OK


# --- entry point --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog='linkforge', description='Planar linkage synthesis.')
    ap.add_argument('--log-level', default='WARNING',
                    choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    sub = ap.add_subparsers(dest='command', required=True)

    p = sub.add_parser('synth', help='synthesize a linkage for a problem file')
    p.add_argument('problem')
    p.add_argument('--output', '-o', required=True)
    p.add_argument('--svg')
    p.add_argument('--no-refine', action='store_true')
    p.add_argument('--workers', type=int, default=1)
    p.add_argument('--time-limit', type=float)
    p.add_argument('--node-limit', type=int)
    p.add_argument('--record-time', action='store_true',
                   help='store wall time in the design file (breaks byte-identical reruns)')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('simulate', help='simulate a design file')
    p.add_argument('design')
    p.add_argument('--steps', type=int)
    p.add_argument('--output', '-o')
    p.add_argument('--svg')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('verify', help='check a design file against the exact constraints')
    p.add_argument('design')
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser('refine', help='polish a design file')
    p.add_argument('design')
    p.add_argument('--output', '-o', required=True)
    p.add_argument('--svg')
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser('sa', help='simulated-annealing baseline')
    p.add_argument('problem')
    p.add_argument('--output', '-o', required=True)
    p.add_argument('--iterations', type=int, default=100_000)
    p.add_argument('--svg')
    p.set_defaults(func=cmd_sa)

    p = sub.add_parser('export', help='write the model in MPS-style text')
    p.add_argument('problem')
    p.add_argument('--output', '-o')
    p.add_argument('--sos-encoding', choices=['native', 'log'], default='native')
    p.set_defaults(func=cmd_export)

    p = sub.add_parser('enumerate', help='count valid topologies')
    p.add_argument('--k', type=int, required=True)
    p.add_argument('--list', action='store_true')
    p.set_defaults(func=cmd_enumerate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except FileError as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_INPUT


if __name__ == '__main__':
    sys.exit(main())
