"""sgdcover: localized epsilon-covers, contraction diagnostics, and
generalization-gap certificates for constant-step projected SGD."""

__version__ = "0.1.0"

from .core import (
    Ball,
    Box,
    ConvexDomain,
    ProductOfBalls,
    Tolerances,
    WholeSpace,
    as_point,
    distance,
    hoeffding_tail,
    numeric_gradient,
    project,
    substream,
)
from .losses import (
    Dataset,
    Distribution,
    LinkFunction,
    LossConstants,
    LossFamily,
    family_from_descriptor,
    hard_kmeans,
    multi_index,
    quadratic_centers,
    smooth_margin_link,
    soft_kmeans,
    squared_error_link,
    stability_counterexample_1d,
    uniform_ball,
    uniform_over,
    zero_link,
)
from .sgd import (
    CouplingReport,
    CustomMap,
    SGDConfig,
    SGDStep,
    Trajectory,
    contraction_factor,
    coupled_contraction_ratio,
    run_trajectory,
    sgd_step,
)
from .cover import (
    BoxCountFit,
    CoverEntry,
    CoverSet,
    CoverVerification,
    EnumerationCapExceeded,
    IFSDimension,
    IFSModel,
    PiecewiseQuadraticApprox,
    PiecewiseSmoothFunction,
    SmoothPiece,
    box_counting_dimension,
    build_piecewise_approx,
    cover_horizon,
    enumerate_cover,
    enumerate_piecewise_cover,
    ifs_dimension,
    replay_entry,
    smooth_function,
    verify_cover,
)
from .bounds import (
    BoundCertificate,
    bound_early,
    bound_expectation,
    bound_fractal,
    bound_hard_kmeans,
    bound_master_covering,
    bound_multi_index,
    bound_piecewise_approx,
    bound_piecewise_contractive,
    bound_single_trajectory,
    bound_soft_kmeans,
    bound_strongly_convex,
    multi_index_piece_params,
    soft_kmeans_params,
)
from .experiments import (
    EMEquivalenceReport,
    EMStepResult,
    GapEstimate,
    HoeffdingReport,
    Scenario,
    StabilityReport,
    ValidationReport,
    em_step,
    empirical_risk,
    estimate_gap,
    hoeffding_check,
    population_risk,
    run_em,
    stability_experiment,
    validate_bound,
    verify_em_equivalence,
)
