"""Space-time Galerkin time stepping for evolutionary systems of changing type."""

from .analysis import (
    DefectNormReport,
    ErrorReport,
    ProbeReport,
    StabilityReport,
    StudyReport,
    StudyRow,
    check_stability,
    convergence_rates,
    defect_norm,
    error_vs_reference,
    probe_norm_equivalence,
    run_study,
    solve_problem,
    weighted_norm,
)
from .errors import (
    BadPartition,
    BadWeight,
    BoundaryMismatch,
    BoundaryMismatchWarning,
    DegreeTooSmall,
    EvostepError,
    KinkNotResolved,
    NonCoercive,
    NotAKnot,
    NotNested,
    NotNestedWarning,
    OutOfDomain,
    SingularSystem,
    StabilityViolated,
    UnresolvedRegion,
)
from .model import (
    MaterialCoefficients,
    ProblemSpec,
    RegionTag,
    SourceTerm,
    build_problem,
    evaluate_source,
    zero_source,
)
from .problems import (
    ManufacturedSolution,
    compose_manufactured_source,
    hyperbolic_regions,
    manufactured_problem,
    oscillating_solution,
    paper_problem,
    paper_regions,
    trial_space_solution,
)
from .slab import (
    DiscreteSolution,
    LoadAssembler,
    assemble_cgp_slab,
    assemble_dg_slab,
    evaluate_solution,
    load_reference,
    march,
    save_reference,
    solve_slab,
    write_solution_dump,
)
from .spacefem import Mesh1D, SpatialSystem1D, assemble_spatial, build_mesh, interpolate_spatial
from .timebasis import (
    TimeBasisPair,
    TimePartition,
    WeightedMoments,
    build_dg_time_bases,
    build_time_bases,
    exp_moments,
    interpolate_trial_space,
    project_test_space,
    uniform_partition,
    weighted_moments,
)

__version__ = "0.1.0"
