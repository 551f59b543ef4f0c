"""Floquet-Bloch spectral toolkit for 1D periodic Schrodinger operators
with a Klein-Gordon dispersive-decay verification harness."""

__version__ = "0.1.0"

from .bands import (
    BandTable,
    QuasimomentumMap,
    E_derivs,
    build_kmap,
    find_bands,
    find_kpp_zero,
    gap_decay_report,
    k_second_deriv_in_w,
    kprime_bounds_check,
)
from .bloch import (
    BlochTable,
    build_bloch_table,
    eigenrelation_check,
    floquet_solutions,
    forward_transform,
    m0_product,
    parseval_check,
)
from .config import RunConfig, load_config
from .errors import (
    BlochKGError,
    BudgetExceeded,
    DegenerateFloquet,
    DegenerateMassWarning,
    EdgePairingFailed,
    HypothesisViolated,
    IntegrationDiverged,
    NonMonotonic,
    NonMonotonePhase,
    TooCloseToEdge,
)
from .hill import MonodromyData, fundamental_on_grid, monodromy, monodromy_batch
from .hill_matrix import band_edges_oracle, bloch_eigenvalues, k_of_lambda_oracle
from .kernel import (
    KernelEvaluator,
    KernelRequest,
    KernelResult,
    cutoff_partition,
    decay_scan,
    eval_kernel,
    tail_bound_estimate,
)
from .oscillatory import OscillatoryIntegral, VdCBound, oscillatory_quad, vdc_bound
from .phase import (
    DegenerateSet,
    PhaseModel,
    eta_derivs,
    find_degenerate_set,
    stationary_point,
    stationary_points_in,
)
from .potential import (
    PeriodicPotential,
    cosine_potential,
    eval_potential,
    free_potential,
    lame_potential,
)

__all__ = [name for name in dir() if not name.startswith("_")]
