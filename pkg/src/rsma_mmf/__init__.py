"""Max-min fair power allocation for uplink rate-splitting multiple access
under finite blocklength coding."""

from .baselines import SchemeKind, embed_solution, noma_solve, rsma_solve, solve_scheme, tin_solve
from .experiments import (
    ResultRow,
    SweepConfig,
    generate_rayleigh,
    parse_config,
    relative_gain,
    run_sweep,
)
from .kernel import ConvexProgram, KernelResult, solve_max_t
from .model import (
    ChannelState,
    DecodingOrder,
    FblParams,
    PowerAllocation,
    StreamId,
    UserPartition,
    build_decoding_order,
    compute_sinr,
    fbl_rate,
    inverse_q,
    user_min_rate,
)
from .oracle import OracleReport, grid_oracle_k2, order_oracle, tangent_bound_check
from .sca import MmfInstance, MmfSolution, SolverConfig, certify_solution, sca_solve

__version__ = "0.1.0"
