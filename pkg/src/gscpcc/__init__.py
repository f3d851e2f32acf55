"""Generalized spatially-coupled parallel concatenated codes on the BEC.

Density evolution, potential-function threshold analysis and finite-length
erasure simulation for parallel concatenated codes with partial information
repetition and spatial coupling.
"""

from .kernels import BACKEND
from .trellis import (
    ERASED,
    ConvCodeSpec,
    InfeasibleObservation,
    InvalidCodeSpec,
    Trellis,
    bcjr_erase,
    build_trellis,
    encode,
)
from .transfer import (
    TabulateBudget,
    TransferCache,
    TransferGrid,
    TransferTable,
    estimate_transfer,
    fs_closed_2state,
    fs_closed_2state_integral,
    integral_identity,
    tabulate,
)

__version__ = "0.1.0"

from .de import (  # noqa: E402
    CoupledRun,
    DEState,
    EnsembleParams,
    ThresholdResult,
    UncoupledFixedPoint,
    bp_threshold,
    de_coupled_run,
    de_uncoupled_fixed_point,
    punctured_epsilon,
    rho_from_rate,
)
from .potential import (  # noqa: E402
    MapThresholdResult,
    PotentialProfile,
    argmin_x,
    capacity_bound,
    eps2_closed_form,
    g_fn,
    G_fn,
    map_threshold_area,
    potential,
    potential_profile,
    potential_threshold,
    prop_checks,
    single_system_threshold,
)
from .studio import (  # noqa: E402
    GapPoint,
    LambdaSweepResult,
    TableJob,
    gap_vs_L,
    optimize_lambda,
    terminated_rate,
    threshold_table,
)
from .codec import (  # noqa: E402
    BerPoint,
    CodeInstance,
    CouplingInfeasible,
    ObservationChain,
    SimConfig,
    bec_channel,
    ber_experiment,
    build_instance,
    coupling_criterion_check,
    decode_chain,
    encode_chain,
)
