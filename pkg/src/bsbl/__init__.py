"""Block sparse Bayesian learning: BSBL-EM, BSBL-BO, BSBL-l1 and the expanded model."""

from .bo import BoConfig, solve_bo, update_gamma_bo
from .correlation import (
    ArCoefficient,
    estimate_r,
    estimate_r_from_blocks,
    estimate_r_pooled,
    toeplitz_ar1,
)
from .ebsbl import Algorithm, ExpandedModel, expand, reconstruct, solve_ebsbl
from .em import (
    EmConfig,
    LambdaRule,
    solve_em,
    update_B,
    update_gamma_em,
    update_lambda_naive,
    update_lambda_robust,
)
from .errors import (
    BSBLError,
    DimensionMismatch,
    InvalidBlockSize,
    InvalidCoefficient,
    NonPSD,
    SingularSystem,
    ZeroSensingBlock,
)
from .group_lasso import GroupLassoProblem, GroupLassoResult, solve_group_lasso
from .l1 import DualWeights, L1Config, build_inner_problem, compute_weights, gamma_from_solution, solve_l1
from .model import (
    BlockPartition,
    Hyperparams,
    PosteriorState,
    Problem,
    RecoveryResult,
    compute_posterior,
    cost_function,
    map_estimate,
)

__version__ = "0.1.0"
