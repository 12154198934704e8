"""Box-constrained optimisers for the reduced cost."""

from .common import (
    ALGORITHMS,
    FISTA,
    LMBFGS,
    NMAPG,
    PGD,
    FitResult,
    FunctionProblem,
    OptimizerConfig,
    OptimizerFailure,
    stopping,
)
from .lmbfgs import (
    LimitedMemoryOperator,
    active_set,
    blend_search,
    compact_update,
    lmbfgs_tr,
    tr_subproblem,
)
from .proximal import bb_stepsize, fista, nmapg, pgd, prox_step, surrogate_Q

SOLVERS = {PGD: pgd, FISTA: fista, NMAPG: nmapg, LMBFGS: lmbfgs_tr}


def minimize(problem, cfg: OptimizerConfig) -> FitResult:
    """Run the algorithm named by ``cfg.algorithm``."""
    return SOLVERS[cfg.algorithm](problem, cfg)
