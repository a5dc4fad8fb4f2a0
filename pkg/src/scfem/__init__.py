"""Adaptive multilevel stochastic collocation finite elements for 2D elliptic PDEs."""

from .adaptive import (
    AdaptiveConfig,
    AdaptiveResult,
    AdaptiveTrace,
    CollocationState,
    TraceRecord,
    init_mesh_for_point,
    mark,
    run,
    run_multilevel,
    run_single_level,
)
from .errors import (
    CannotEnrichError,
    CoercivityError,
    ConfigError,
    ContractViolationError,
    IncompatibleMeshError,
    InvalidLevelError,
    MeshInitFailureError,
    ScfemError,
    SolverFailureError,
    UnknownDomainError,
)
from .estimators import (
    GlobalEstimates,
    ParametricIndicator,
    SpatialIndicator,
    global_parametric_estimate,
    global_spatial_estimate,
    parametric_indicators,
    qoi_estimate,
    reference_error,
    spatial_indicator,
)
from .fem import (
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    energy_norm,
    l2_norm,
    solve,
)
from .mesh import (
    Triangulation,
    initial_mesh,
    interior_midpoints,
    overlay,
    prolongate,
    uniform_refine,
)
from .multiindex import MultiIndexSet, is_monotone, reduced_margin
from .problems import (
    ProblemSpec,
    custom_problem,
    get_problem,
    kl_eigenpairs_1d,
    kl_eigenpairs_2d,
    test_case_1,
    test_case_2,
    test_case_3,
)
from .sparse_grid import (
    CollocationPoint,
    SparseGridBasis,
    cc_node_count,
    cc_points,
    combination_coeffs,
    evaluate_lagrange,
    generated_points,
    grid_points,
    interpolate,
    lagrange_gram,
    lagrange_norm,
)

__version__ = "0.1.0"
