"""knockem: FDR-controlled variable selection with knockoffs for feature
matrices afflicted by missing values and additive measurement error."""

from .datagen import (
    ArSpec,
    BetaSpec,
    MissingSpec,
    SimulatedDataset,
    ar_cov,
    generate_scenario,
)
from .errorcov import ErrorCov, QcSamples, psd_repair, qc_cov, qc_paired_cov
from .exceptions import ConfigError, DataError, KnockemError, SolverError
from .filter import (
    SelectionReport,
    StabilityReport,
    StatTensor,
    order_features,
    pvalues,
    select,
    seqstep,
    stability_select,
)
from .harness import RunSummary, ScreenOptions, SimConfig, fdp_power, run_replicates, screen
from .impute import CompletedSet, ImputeConfig, ObservedData, impute_chained, impute_simple
from .knockoff import (
    GaussianModel,
    KnockoffPlan,
    build_plan,
    fit_gaussian,
    sample_knockoffs,
    solve_s_block,
    solve_s_equi,
)
from .stats import (
    AugmentedDesign,
    StatPair,
    augment,
    lasso_fit,
    stat_corrected_lasso,
    stat_gds,
    stat_gmus,
    stat_lasso_coef,
    stat_lasso_order,
    stat_rf,
)

__version__ = "0.1.0"
