"""Matrix-free library and CLI for decentralized convex optimization under
mixed affine constraints: block operator algebra, condition-number calculus,
Chebyshev preconditioning, reformulation builders, accelerated primal-dual
and sliding solvers with oracle counters, and worst-case instance generators.
"""

from .operators import (
    CounterSet,
    DenseOperator,
    IdentityOperator,
    LinearOperator,
    SpectralBounds,
    ZeroOperator,
    block_diag,
    block_stack,
    instrumented,
    kernel_projector,
    kron_gossip,
    materialize,
    spectral_bounds,
)
from .conditioning import (
    ChebyshevOperator,
    MatrixFamily,
    ScalingCoefficients,
    chebyshev_apply,
    chebyshev_degree,
    chebyshev_operator,
    coupled_scaling,
    identical_local_scaling,
    interaction_matrix,
    mixed_condition_number,
    mixed_scaling,
    projected_condition_number,
    shared_scaling,
)
from .network import GossipMatrix, laplacian, path_for_kappa, standard_topologies
from .oracles import (
    Box,
    L1Oracle,
    ObjectiveOracle,
    QuadraticOracle,
    penalize,
    quadratic_oracle,
    regularize,
)
from .problems import (
    AffineProblem,
    BuildOptions,
    InfeasibleInstanceError,
    MixedProblemData,
    build_consensus,
    build_coupled,
    build_coupled_local,
    build_mixed,
    build_shared,
    full_pipeline,
    load_instance,
    nonsmooth_strongly_convex_penalty_config,
    random_mixed_instance,
    save_instance,
)
from .solvers import (
    ApapcParams,
    DivergenceError,
    SlidingSchedule,
    SolveReport,
    StopRule,
    apapc,
    apapc_params,
    gradient_sliding,
    instrument_problem,
    restarted_sliding,
    sliding_prox_step,
    solve_convex_regularized,
)
from .worstcase import (
    WorstInstanceSpec,
    build_worst_coupled_local,
    build_worst_shared,
    nesterov_dual_solution,
    nesterov_rho,
    nesterov_tridiagonal,
    split_interleaved,
)

__version__ = "0.1.0"
