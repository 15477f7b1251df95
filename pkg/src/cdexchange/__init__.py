"""Cobb-Douglas exchange economy: event-driven simulation, stationary-law
verification, and certified total-variation convergence rates."""

from .bounds import (
    DoeblinLevel,
    DoeblinReport,
    GoodBound,
    MinorizationCheck,
    NumericalNonConvergence,
    density_ratio_floor,
    doeblin_report,
    gamma_ratio_floor,
    minorization_check,
    minorization_coefficients,
    minorization_mass,
    optimize_rate,
    rate_ratio,
)
from .economy import (
    BadDimensions,
    ConfigError,
    ConservationError,
    DirichletSpec,
    EconomyConfig,
    IndexOutOfRange,
    NegativeEndowment,
    NegativeHolding,
    NonPositiveExponent,
    NonPositiveOffDiagonalRate,
    NonPositiveParameter,
    NonSymmetricRates,
    PointOffSimplex,
    SameAgent,
    State,
    ZeroTotalGood,
    apply_encounter,
    beta_sample,
    check_state,
    config_digest,
    dirichlet_log_density,
    good_spec,
    require_validated,
    sample_dirichlet,
    validate_config,
)
from .cli import (
    ParseError,
    RunManifest,
    ValidationError,
    kac_preset,
    load_config,
    main,
    run,
)
from .simulate import (
    AliasTable,
    EnsembleStats,
    SimulationPlan,
    Trajectory,
    derived_rng,
    embedded_chain_step,
    plan_digest,
    run_ensemble,
    simulate_trajectory,
    validate_plan,
)
from .stats import (
    BinningMismatch,
    ConvergenceReport,
    DegenerateParameters,
    EmptySample,
    HistogramBinning,
    KsResult,
    TooFewSamples,
    binned_tv,
    convergence_report,
    default_binning,
    dirichlet_moments,
    marginal_ks,
    moment_z_scores,
)

__version__ = "0.1.0"
