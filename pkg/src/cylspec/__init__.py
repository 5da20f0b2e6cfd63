"""Finite-element eigenvalue studies on expanding cylinder domains.

The package computes mixed Dirichlet-Neumann eigenvalues of divergence-form
operators on product domains (scaled base x fixed cross-section), together
with the lower-dimensional problems that govern their large-scale limit:
the cross-section eigenvalue, direction-reduced half-strip values, slab
values, boundary-concentration diagnostics, and certified upper bounds.
"""

__version__ = "0.1.0"

from .geometry import (
    BaseSpec,
    CrossSectionSpec,
    CylinderSpec,
    Direction,
    classify_boundary_facet,
    outward_normals,
    point_in_scaled_base,
)
from .coefficient import (
    CoefficientField,
    ReducedCoefficient,
    conjugate_rotation,
    parse_expr,
    reduce_direction,
    verify_ellipticity,
)
from .mesh import Mesh, extrude, mesh_box2, mesh_box3, mesh_interval, mesh_polygon
from .fem import DiscreteOperatorPair, SparseSym, assemble, interpolate, rayleigh
from .eigensolve import EigenResult, dense_oracle, factorize, smallest_eigenpairs
from .spectral import (
    CrossSectionResult,
    DecayProfile,
    ReducedResult,
    SolverOptions,
    SpectralError,
    SweepResult,
    cross_resolution,
    decay_profile,
    discretize_full,
    gap_condition_holds,
    solve_cross_section,
    solve_full,
    solve_reduced,
    solve_slab,
    subdivisions,
    sweep_directions,
    upper_bound_quotient,
)
from .study import (
    ConfigError,
    StudyConfig,
    StudyRecord,
    emit_plot,
    load_config,
    run_study,
    write_artifacts,
)

__all__ = [
    "BaseSpec",
    "CrossSectionSpec",
    "CylinderSpec",
    "Direction",
    "classify_boundary_facet",
    "outward_normals",
    "point_in_scaled_base",
    "CoefficientField",
    "ReducedCoefficient",
    "conjugate_rotation",
    "parse_expr",
    "reduce_direction",
    "verify_ellipticity",
    "Mesh",
    "extrude",
    "mesh_box2",
    "mesh_box3",
    "mesh_interval",
    "mesh_polygon",
    "DiscreteOperatorPair",
    "SparseSym",
    "assemble",
    "interpolate",
    "rayleigh",
    "EigenResult",
    "dense_oracle",
    "factorize",
    "smallest_eigenpairs",
    "CrossSectionResult",
    "DecayProfile",
    "ReducedResult",
    "SolverOptions",
    "SpectralError",
    "SweepResult",
    "cross_resolution",
    "decay_profile",
    "discretize_full",
    "gap_condition_holds",
    "solve_cross_section",
    "solve_full",
    "solve_reduced",
    "solve_slab",
    "subdivisions",
    "sweep_directions",
    "upper_bound_quotient",
    "ConfigError",
    "StudyConfig",
    "StudyRecord",
    "emit_plot",
    "load_config",
    "run_study",
    "write_artifacts",
]
