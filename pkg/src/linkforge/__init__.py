"""Joint topology and dimension synthesis of planar single-DOF linkages."""
from .core import (
    LinkageDesign,
    Motor,
    Normalization,
    ProblemSpec,
    SpecError,
    Topology,
    Trajectory,
    UserConstraints,
    enumerate_topologies,
    jansen_preset,
    validate_topology,
)
from .kin import simulate_cycle, trajectory_error, verify_design

__version__ = '0.1.0'

__all__ = [
    'LinkageDesign', 'Motor', 'Normalization', 'ProblemSpec', 'SpecError', 'Topology',
    'Trajectory', 'UserConstraints', 'enumerate_topologies', 'jansen_preset',
    'simulate_cycle', 'trajectory_error', 'validate_topology', 'verify_design',
]
