from .builders import (
    VariableLayout,
    add_connectivity_constraints,
    add_distance_definitions,
    add_equidistant_constraints,
    add_flow_constraints,
    add_min_length_constraints,
    add_pwl_bounds,
    add_pwl_square,
    add_reverse_flow_constraints,
    add_rotation_constraints,
    add_sector_constraints,
    add_state_constraints,
    add_user_constraints,
    build_model,
    declare_positions,
    expected_counts,
    set_objective,
)
from .check import check_assignment, is_feasible, sos_violation
from .encode import EncodingError, embed_topology, encode_design, repair_guarded
from .geometry import PwlGrid, SectorTable
from .ir import BINARY, CONTINUOUS, AffineRow, MicpModel
from .mps import export_model, log_encode_sos, parse_model

__all__ = [
    'AffineRow', 'BINARY', 'CONTINUOUS', 'EncodingError', 'MicpModel', 'PwlGrid',
    'SectorTable', 'VariableLayout', 'add_connectivity_constraints', 'add_distance_definitions',
    'add_equidistant_constraints', 'add_flow_constraints', 'add_min_length_constraints',
    'add_pwl_bounds', 'add_pwl_square', 'add_reverse_flow_constraints',
    'add_rotation_constraints', 'add_sector_constraints', 'add_state_constraints',
    'add_user_constraints', 'build_model', 'check_assignment', 'declare_positions',
    'embed_topology', 'encode_design', 'expected_counts', 'export_model', 'is_feasible',
    'log_encode_sos', 'parse_model', 'repair_guarded', 'set_objective', 'sos_violation',
]
