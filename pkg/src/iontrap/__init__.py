"""First-principles ion trap simulation: surface-electrode and two-wafer
geometries, boundary-element electrostatics, rf pseudopotential, and radial
trapping figures of merit."""

from .constants import AMU, CA40, ECHARGE, EPS0, SPECIES, IonSpecies, get_species
from .errors import (
    DepthError,
    FitError,
    InvalidGeometryError,
    InvalidInputError,
    IonTrapError,
    NullAmbiguityError,
    NullNotFoundError,
    SolverError,
)
from .geometry import (
    DEFAULT_H_UM,
    Box3,
    Electrode,
    GeometryParams,
    MeshParams,
    Rect,
    TrapGeometry,
    build_cross_rf_trap,
    build_default,
    build_gnd_surface_trap,
    build_surface_trap,
    default_cross_rf_params,
    default_gnd_surface_params,
    default_surface_params,
    five_wire_null_seed_um,
    refine_mesh,
)
from .bem import (
    PanelSet,
    SolvedTrap,
    UnitSolution,
    evaluate_field,
    solve_unit_excitations,
)
from .pseudo import (
    DEFAULT_DRIVE,
    BemRfField,
    DriveParams,
    PseudoField,
    PseudoMap,
    QuadrupoleField,
    pseudo_map,
)
from .merit import (
    AxisFit,
    DepthResult,
    HarmonicityResult,
    NullResult,
    OperatingPoint,
    TrapReport,
    drive_for_target,
    find_rf_null,
    fit_axis_harmonicity,
    fit_harmonicity,
    flood_fill_escape,
    full_report,
    heating_norm,
    max_frequency,
    operating_q,
    power_norm,
    radial_frequency,
    stability_q,
    trap_depth,
)

__version__ = "0.1.0"

__all__ = [
    "AMU", "CA40", "ECHARGE", "EPS0", "SPECIES", "IonSpecies", "get_species",
    "IonTrapError", "InvalidInputError", "InvalidGeometryError", "SolverError",
    "NullNotFoundError", "NullAmbiguityError", "FitError", "DepthError",
    "Rect", "Electrode", "Box3", "MeshParams", "GeometryParams", "TrapGeometry",
    "build_surface_trap", "build_gnd_surface_trap", "build_cross_rf_trap",
    "build_default", "refine_mesh", "DEFAULT_H_UM",
    "default_surface_params", "default_gnd_surface_params",
    "default_cross_rf_params", "five_wire_null_seed_um",
    "PanelSet", "SolvedTrap", "UnitSolution", "solve_unit_excitations",
    "evaluate_field",
    "DriveParams", "DEFAULT_DRIVE", "BemRfField", "QuadrupoleField",
    "PseudoField", "PseudoMap", "pseudo_map",
    "NullResult", "AxisFit", "HarmonicityResult", "DepthResult",
    "OperatingPoint", "TrapReport", "find_rf_null", "fit_harmonicity",
    "fit_axis_harmonicity", "flood_fill_escape", "trap_depth", "full_report",
    "radial_frequency", "stability_q", "operating_q", "max_frequency",
    "drive_for_target", "heating_norm", "power_norm",
]
