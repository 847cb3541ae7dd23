import math

import numpy as np
import pytest

from linkforge.core import (LinkageDesign, Motor, Normalization, ProblemSpec, SpecError, Topology,
                            UserConstraints, enumerate_topologies, normalize_target,
                            validate_topology)

from oracles import count_topologies


@pytest.mark.parametrize('K', [3, 4, 5])
def test_topology_count_matches_graph_search(K):
    assert len(enumerate_topologies(K)) == count_topologies(K)


def test_three_node_topologies():
    topos = enumerate_topologies(3)
    assert len(topos) == 2
    assert {t.parents[2] for t in topos} == {(0, 1), (1, 0)}
    assert all(t.fixed[1] for t in topos)


def test_enumeration_is_sorted_and_unique():
    topos = enumerate_topologies(4)
    keys = [t.sort_key() for t in topos]
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)


def test_enumerate_refuses_large_k():
    with pytest.raises(ValueError):
        enumerate_topologies(7)


def test_force_unused():
    topos = enumerate_topologies(4, force_unused=[1])
    assert topos and all(not t.used[1] for t in topos)


@pytest.mark.parametrize('topo,kind', [
    (Topology((True, True, True), (False, True, False), (None, None, (1, 1))), 'duplicate-parents'),
    (Topology((True, True, True), (False, True, False), (None, None, (1, 2))), 'parent-not-lower'),
    (Topology((True, True, True), (True, True, False), (None, None, (0, 1))), 'motor-fixed'),
    (Topology((True, False, True), (False, False, False), (None, None, (0, 1))), 'unused-movable'),
    (Topology((True, True, True, True), (False, True, True, False), (None, None, None, (1, 2))),
     'no-movable-path-to-motor'),
    (Topology((True, True, True, True), (False, False, True, False),
              (None, (0, 0), None, (0, 2))), 'cannot-reach-end-effector'),
])
def test_validate_topology_reports(topo, kind):
    kinds = {v.kind for v in validate_topology(topo, topo.K)}
    assert kind in kinds


def test_spec_validation():
    tgt = ((0.0, 0.0), (0.1, 0.0), (0.0, 0.1))
    assert ProblemSpec(target=tgt).T == 3
    with pytest.raises(SpecError):
        ProblemSpec(target=tgt, K=2)
    with pytest.raises(SpecError):
        ProblemSpec(target=tgt, epsilon=1.0)       # larger than pi/S
    with pytest.raises(SpecError):
        ProblemSpec(target=((2.0, 0.0), (0, 0), (0, 0)))
    with pytest.raises(SpecError):
        ProblemSpec(target=tgt[:2] + ((0.0, 0.0),) * 2, T=3)
    with pytest.raises(SpecError):
        UserConstraints(containment_polygon=((0, 0), (0, 1), (1, 0)))   # clockwise


def test_normalization_roundtrip():
    pts = np.array([[10.0, 5.0], [14.0, 9.0], [12.0, 1.0]])
    norm = normalize_target(pts)
    mapped = norm.apply(pts)
    assert np.max(np.abs(mapped)) == pytest.approx(0.8)
    assert np.allclose(norm.invert(mapped), pts)
    assert normalize_target([[0.1, 0.2], [0.0, 0.0], [0.3, -0.1]]) == Normalization()


def test_design_invariants_and_compact():
    topo = Topology((True, False, True, True), (False, True, True, False),
                    (None, None, None, (0, 2)), 1)
    d = LinkageDesign(topo, (None, None, None, (0.3, 0.05)), (None, None, (0.2, 0.2), None),
                      Motor((0.0, 0.0), 0.2))
    assert any('l_min' in p for p in d.check_invariants(0.1, 1.0))
    c, keep = d.compact()
    assert keep == (0, 2, 3)
    assert c.topology.parents == (None, None, (0, 1))
    assert not validate_topology(c.topology, 3)
    assert math.isclose(c.fixed_positions[1][0], 0.2)
