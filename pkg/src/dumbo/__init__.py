"""Decentralized high-dimensional Bayesian optimization.

Additive GP surrogates over a factor graph, a calibrated decentralized
upper-confidence acquisition, an ADMM consensus maximizer with an
early-stopped minimax mode, and MCMC inference of unknown additive
decompositions, plus a benchmark CLI.
"""

from .acquisition import (
    AcquisitionBundle,
    beta_schedule,
    local_acquisition,
    local_acquisition_gradient,
    lipschitz_phi,
    make_bundle,
    solve_quartic_a,
    total_acquisition,
    variance_bounds,
)
from .admm import (
    AdmmParams,
    AdmmState,
    admm_maximize,
    consensus_update,
    dual_update,
    graph_from_nodes,
    local_step,
    minimax_consensus,
)
from .benchmarks import BENCHMARKS, BenchmarkSpec, get_benchmark
from .decomp import (
    AveragedAcquisition,
    DecompositionChain,
    averaged_acquisition,
    decomposition_log_posterior,
    mcmc_sample_candidates,
    propose_decomposition,
)
from .domain import (
    BoxDomain,
    Dataset,
    Decomposition,
    FactorGraph,
    build_factor_graph,
    format_decomposition,
    parse_decomposition,
    validate_decomposition,
)
from .driver import (
    CampaignSettings,
    CampaignState,
    VARIANTS,
    Variant,
    bo_step,
    bound_violation_study,
    regret_bound,
    run_campaign,
    start_campaign,
)
from .gp import (
    DecomposedGPModel,
    JointGPModel,
    fit_decomposed,
    fit_joint,
    fit_kernel_hyperparameters,
    log_marginal_likelihood,
)
from .kernels import (
    Kernel,
    kernel_eval,
    kernel_gradient,
    kernel_lipschitz,
    make_kernel,
)

__version__ = "0.1.0"
