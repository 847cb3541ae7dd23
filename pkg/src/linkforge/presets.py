"""Ready-made design records (used as CLI fixtures)."""
from __future__ import annotations

from .cli.files import DesignRecord
from .core import ProblemSpec, jansen_preset
from .kin import simulate_cycle, trajectory_error

# the Jansen leg has parent angles down to ~0.15 rad, so it needs a fine sector grid
JANSEN_S = 24
JANSEN_EPSILON = 0.01


def jansen_record(T: int = 16) -> DesignRecord:
    design = jansen_preset()
    traj = simulate_cycle(design, T)
    spec = ProblemSpec(target=tuple(map(tuple, traj.end_effector.tolist())), K=design.K,
                       S=JANSEN_S, T=T, epsilon=JANSEN_EPSILON)
    obj = trajectory_error(traj, spec.target_array, spec.w, design.K)
    return DesignRecord(design, traj, spec, status='preset', refined=True, verified=True,
                        objective=obj)
