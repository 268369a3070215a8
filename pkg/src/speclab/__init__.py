"""speclab: desk-scale spectral statistics for lattice operators with growing random potential."""

from .lattice import (
    DisorderSample,
    HamiltonianMatrix,
    LatticeBox,
    LatticeError,
    ModelParams,
    assemble_hamiltonian,
    enumerate_box,
    sample_disorder,
    weight_b,
    weight_sum,
)
from .spectral import (
    BoundCheckReport,
    EstimatorError,
    IdsEstimate,
    InvariantViolation,
    SolverError,
    Spectrum,
    check_spectral_averaging,
    check_wegner_minami,
    count_below,
    eigenvalues,
    empirical_ids,
    estimate_N1_prime,
    expected_count_diag,
    sandwich_counts,
)
from .pointprocess import (
    BlockDecomposition,
    BorelSet,
    CountDistribution,
    GofReport,
    PointConfiguration,
    SpacingReport,
    SuperpositionResult,
    block_decompose,
    count_in,
    counting_distribution,
    eta_processes,
    gap_statistics,
    poisson_gof,
    rescale,
    superposition_distance,
)
from .green import (
    AppendixLimitReport,
    BranchCutError,
    BudgetError,
    FracMomentReport,
    RegionError,
    RegionGParams,
    WalkExpansionResult,
    appendix_limit_check,
    b_ell,
    b_ell_bound,
    branch_log,
    frac_moment,
    g_L,
    in_region_G,
    phi_L,
    psi_L_mc,
    resolvent_entry,
    walk_expansion_diag,
)

__version__ = "0.1.0"
