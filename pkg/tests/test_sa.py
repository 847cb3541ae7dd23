import math

import numpy as np
import pytest

from linkforge.core import ProblemSpec, jansen_preset
from linkforge.instances import generate_instance
from linkforge.kin import simulate_cycle
from linkforge.sa import SaConfig, accept, evaluate, random_move, sa_search


@pytest.fixture(scope='module')
def inst():
    return generate_instance(4, 5, 6, seed=7)


@pytest.mark.parametrize('delta,tau', [(0.1, 0.1), (0.05, 0.2), (1.0, 0.5)])
def test_acceptance_probability(delta, tau):
    rng = np.random.default_rng(0)
    n = 100_000
    rate = sum(accept(delta, tau, rng) for _ in range(n)) / n
    assert abs(rate - math.exp(-delta / tau)) <= 0.01


def test_improvements_always_accepted():
    rng = np.random.default_rng(0)
    assert accept(-1.0, 0.0, rng) and accept(0.0, 1e-9, rng)
    assert not accept(1e-9, 0.0, rng)


def test_moves_change_structure(inst):
    rng = np.random.default_rng(2)
    d = inst.design
    geo = random_move(d, 'geometric', rng)
    assert geo.topology == d.topology and geo != d
    added = random_move(d, 'add', rng)
    assert added.K == d.K + 1 and added.topology.parents[-1] is not None
    removed = random_move(d, 'remove', rng)
    assert removed.K < d.K and removed.topology.movable(removed.K - 1)
    with pytest.raises(ValueError):
        random_move(d, 'teleport', rng)


def test_remove_on_jansen_keeps_valid_chain():
    d = random_move(jansen_preset(), 'remove', np.random.default_rng(0))
    simulate_cycle(d, 16)


def test_evaluate_rejects_oversized(inst):
    spec = inst.spec.with_(K=3)
    assert evaluate(inst.design, spec) is None
    assert evaluate(inst.design, inst.spec) == pytest.approx(inst.spec.w * inst.design.K, abs=1e-12)


def test_same_seed_same_trace(inst):
    cfg = SaConfig(iterations=400, trace_every=50, seed=5)
    a, b = sa_search(inst.spec, cfg), sa_search(inst.spec, cfg)
    assert a.trace == b.trace and a.objective == b.objective and a.design == b.design
    assert [v for _, v in a.trace] == sorted((v for _, v in a.trace), reverse=True)


def test_greedy_geometric_never_worsens(inst):
    cfg = SaConfig(iterations=300, initial_temperature=0.0, weights=(1.0, 0.0, 0.0),
                   trace_every=1, seed=1)
    res = sa_search(inst.spec, cfg, initial=inst.design)
    start = inst.spec.w * inst.design.K
    assert all(v <= start + 1e-15 for _, v in res.trace)
    assert res.objective == pytest.approx(start, abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        SaConfig(cooling=1.5)
    with pytest.raises(ValueError):
        SaConfig(weights=(0.5, 0.5, 0.5))
