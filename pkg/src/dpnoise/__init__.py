"""Additive-noise design and privacy accounting under composition."""

from .errors import (
    BisectionFailure,
    CalibrationFailure,
    DivergentTail,
    DomainViolation,
    GridOverflow,
    IngestError,
    NoiseDesignError,
    NormalizationViolation,
    ParseError,
    QuadratureFailure,
    RangeViolation,
    SearchFailure,
    SingularProjection,
    StrictFeasibilityViolation,
    Unattainable,
)
from .family import (
    CostSpec,
    DomainKind,
    TailedNoiseFamily,
    deserialize,
    load_document,
    make_family,
    normalization_sum,
    serialize,
    to_csv,
)
from .rdp import (
    ObjectiveReport,
    g_brute,
    g_max,
    g_shift,
    grad_g,
    grad_log_g,
    log_g_shift,
    shift_count,
)
from .optimizer import (
    OptimizationProblem,
    OptimizedNoise,
    SolverSettings,
    StepReport,
    TraceRecord,
    alpha_init,
    build_constraints,
    descent_step,
    init_distribution,
    moments_gamma,
    newton_alpha,
    optimize,
)
from .accounting import (
    PrivacyCurve,
    PrivacyLossDistribution,
    account_family,
    curve_to_csv,
    delta_for_epsilon,
    epsilon_for_delta,
    exact_single_delta,
    family_rdp_eval,
    moments_epsilon,
    pld_from_family,
    pld_self_compose,
)
from .baselines import (
    MECHANISMS,
    build_mechanism_family,
    discrete_gaussian_family,
    discrete_laplace_family,
    embed_density,
    gaussian_delta,
    gaussian_family,
    gaussian_rdp,
    laplace_family,
    laplace_rdp_numeric,
    laplace_scale_for_variance,
)
from .bench import (
    BenchResult,
    BenchRow,
    BenchSettings,
    calibrate_sigma,
    load_dataset,
    normalize_features,
    run_bench,
    sample_family,
    synthetic_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
