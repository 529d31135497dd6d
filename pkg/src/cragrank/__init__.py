"""cragrank: time-varying climber ratings and route difficulty from ascent logs."""

from .errors import CragrankError, EmptyDatasetError, ParseError
from .evaluation import (
    ContingencyTable,
    EvaluationReport,
    FoldPlan,
    PRPoint,
    baseline_log_loss,
    classify,
    compute_metrics,
    cross_validate,
    cross_validate_predictions,
    linear_fit_r_squared,
    make_fold_plan,
    precision_recall_curve,
    predict_probabilities,
    rating_at_nearest_week,
)
from .ingest import (
    DEFAULT_TICK_MAPPING,
    AscentRecord,
    CleanDataset,
    RawAscentRow,
    RouteInfo,
    TickClass,
    classify_tick,
    load_tick_mapping,
    median_grade,
    parse_ascent_log,
    preprocess,
    quantize_week,
    read_clean_dataset,
    write_clean_dataset,
)
from .model import (
    AscentOutcome,
    DerivativePair,
    Hyperparameters,
    bt_derivatives,
    bt_probability,
    normal_prior_derivatives,
    route_prior_mean,
    wiener_variance,
    win_probabilities,
)
from .solver import (
    ClimberHistory,
    FitReport,
    ModelState,
    RouteNode,
    bt_marginal_log_likelihood,
    fit,
    initialize_state,
    solve_tridiagonal,
    update_climber,
    update_route,
)
from .synthetic import (
    RecoveryReport,
    SyntheticWorld,
    generate_world,
    recovery_report,
    simulate_ascents,
    simulate_trials,
)

__version__ = "0.1.0"
