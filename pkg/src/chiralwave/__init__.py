"""Bloch modes, local polarization, and chiral emitter optimization for
glide-plane photonic-crystal waveguides."""

__version__ = "0.1.0"

from .coupling import (AveragingMask, DirectionalityResult, area_metrics,
                       average_directionality, core_mask, directionality_map,
                       emission_rates, purcell_map)
from .geometry import (DielectricGrid, SupercellGeometry, build_bulk_dielectric,
                       build_dielectric, hole_boundary_distance)
from .modesolver import (BandStructure, BlochMode, band_scan, group_index,
                         projected_bulk_intervals, solve_modes)
from .optimizer import (DipoleComparison, KSweepRow, OptimizationResult,
                        compare_dipoles, k_sweep, scan_objective,
                        select_guided_mode)
from .polarization import (CPoint, DipoleState, EllipseAngles, PolarizationField,
                           StokesVector, alpha_delta_from_angles,
                           angles_from_alpha_delta, angles_to_jones,
                           find_c_points, jones_fidelity, jones_to_stokes,
                           polarization_field, stokes_to_angles)
from .fieldio import (parse_eps_grid, parse_field_file, write_eps_grid,
                      write_field_file)

__all__ = [
    "AveragingMask",
    "BandStructure",
    "BlochMode",
    "CPoint",
    "DielectricGrid",
    "DipoleComparison",
    "DipoleState",
    "DirectionalityResult",
    "EllipseAngles",
    "KSweepRow",
    "OptimizationResult",
    "PolarizationField",
    "StokesVector",
    "SupercellGeometry",
    "alpha_delta_from_angles",
    "angles_from_alpha_delta",
    "angles_to_jones",
    "area_metrics",
    "average_directionality",
    "band_scan",
    "build_bulk_dielectric",
    "build_dielectric",
    "compare_dipoles",
    "core_mask",
    "directionality_map",
    "emission_rates",
    "find_c_points",
    "group_index",
    "hole_boundary_distance",
    "jones_fidelity",
    "jones_to_stokes",
    "k_sweep",
    "parse_eps_grid",
    "parse_field_file",
    "polarization_field",
    "projected_bulk_intervals",
    "purcell_map",
    "scan_objective",
    "select_guided_mode",
    "solve_modes",
    "stokes_to_angles",
    "write_eps_grid",
    "write_field_file",
    "__version__",
]
