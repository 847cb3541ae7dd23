import numpy as np
import pytest

from linkforge.bb import BBParams, solve_micp
from linkforge.core import enumerate_topologies
from linkforge.instances import encodable, generate_instance
from linkforge.kin import verify_design
from linkforge.model import build_model, check_assignment, is_feasible
from linkforge.pipeline import RefineHeuristic, fix_topology, synthesize, topology_oracle


@pytest.fixture(scope='module')
def inst():
    return generate_instance(3, 5, 4, seed=13, n=3)


def test_generated_instances_are_encodable(inst):
    s = inst.spec
    assert encodable(inst.design, inst.trajectory, s.S, s.epsilon, s.B)
    assert verify_design(inst.design, s).passed


def test_synthesize_recovers_generator(inst):
    res = synthesize(inst.spec, BBParams(time_limit=60))
    assert res.status == 'optimal' and res.verified
    track = res.objective - inst.spec.w * res.design.K
    assert track <= 1e-4
    assert res.bb.lower_bound <= res.bb.objective + 1e-12


def test_oracle_matches_branch_and_bound(inst):
    res = synthesize(inst.spec, BBParams(time_limit=60), do_refine=False)
    ora = topology_oracle(inst.spec, BBParams(time_limit=8))
    assert ora.objective == pytest.approx(res.bb.objective, rel=1e-6)
    assert len(ora.solves) == 2 * len(enumerate_topologies(3))


def test_fixed_topology_search_stays_in_topology(inst):
    m, lay = build_model(inst.spec)
    topo = inst.design.topology
    branch = fix_topology(topo, lay)
    r = solve_micp(m, lay, BBParams(time_limit=30), branch=branch,
                   heuristic=RefineHeuristic(inst.spec, m, lay))
    assert r.incumbent is not None
    x = r.incumbent.x
    assert round(x[lay.D]) == topo.direction
    assert is_feasible(check_assignment(m, x))


def test_heuristic_returns_full_feasible_assignment(inst):
    m, lay = build_model(inst.spec)
    calls = []
    h = RefineHeuristic(inst.spec, m, lay)

    def spy(x):
        out = h(x)
        if out is not None:
            calls.append(out)
        return out
    solve_micp(m, lay, BBParams(time_limit=30), heuristic=spy)
    assert calls
    for x in calls:
        assert is_feasible(check_assignment(m, x))
        assert np.all(np.isfinite(x))
