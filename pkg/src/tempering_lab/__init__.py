"""Verification lab for parallel tempering spectral-gap bounds.

Everything operates on finite atom spaces, so overlaps, bottleneck ratios,
projections, canonical-path congestion, and Cheeger certificates are exact
sums or eigensolves rather than estimates.

``TEMPERING_LAB_THREADS`` caps BLAS parallelism; it must be set before the
first numpy import to take effect, which this module arranges for its own
entry points.
"""

import os as _os

_threads = _os.environ.get("TEMPERING_LAB_THREADS")
if _threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)

from .errors import BudgetExceededError, ReversibilityError
from .measure import (
    AssignmentSpace,
    FiniteTarget,
    ProductAssignment,
    TemperatureLadder,
    TemperedFamily,
    bottleneck_B,
    overlap_phi,
    pi_bar,
    random_family,
    swap_acceptance_marginal,
    temper,
)
from .kernels import (
    ProductSpace,
    StochasticMatrix,
    aux_chain_P1,
    aux_chain_P2,
    default_level_kernels,
    export_kernel_csv,
    metropolis_level_kernel,
    product_update_T,
    project,
    projected_update_chain,
    pt_composition,
    pt_kernel,
    restrict,
    swap_kernel_Q,
    uniform_proposal,
)
from .spectral import (
    SpectrumReport,
    cheeger_ratio,
    dirichlet_form,
    spectral_gap,
    tv_bound,
    variance,
)
from .paths import (
    AdjSwap,
    CongestionReport,
    MoveSequence,
    SetLevel0,
    apply_moves,
    canonical_paths,
    congestion,
    divergence_bound_D,
    edge_multiplicity_check,
    k_star,
    level0_path,
    max_divergence,
    path_length_F,
    swap_sequence,
)
from .hardness import (
    CertificateReport,
    HardInstance,
    block_family,
    build_hard_instance,
    certificate,
    constrained_projected_chain,
    enumerate_S,
    exact_bottleneck,
    min_divergence_f,
    verify_bottleneck_bound,
    verify_mode_mass_bounds,
)
from .sampler import (
    PTTrace,
    empirical_tv,
    run_parallel_tempering,
    swap_stats,
)

__version__ = "0.1.0"
