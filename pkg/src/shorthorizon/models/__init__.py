from .predictors import (
    AUTO,
    DEFAULT_C_GRID,
    DEFAULT_DEPTH_GRID,
    DEFAULT_EPSILON_GRID,
    BaselinePredictor,
    ConvergenceWarning,
    Family,
    ForestPredictor,
    LinearPredictor,
    ModelSpec,
    Standardizer,
    SVRPredictor,
    TrainedPredictor,
    bootstrap_indices,
    default_gamma,
    fit,
    fit_baseline,
    fit_forest,
    fit_ols,
    fit_svr,
    kkt_violations,
    load_model,
    rbf_kernel,
    rf_feature_importance,
    save_model,
    solve_svr_dual,
    top_features,
)
from .selection import Selection, default_grid, grid_from_config, grid_search

__all__ = [
    "AUTO", "DEFAULT_C_GRID", "DEFAULT_DEPTH_GRID", "DEFAULT_EPSILON_GRID",
    "BaselinePredictor", "ConvergenceWarning", "Family", "ForestPredictor", "LinearPredictor",
    "ModelSpec", "Standardizer", "SVRPredictor", "TrainedPredictor", "Selection",
    "bootstrap_indices", "default_gamma", "default_grid", "fit", "fit_baseline", "fit_forest", "fit_ols", "fit_svr", "grid_from_config",
    "grid_search", "kkt_violations", "load_model", "rbf_kernel", "rf_feature_importance",
    "save_model", "solve_svr_dual", "top_features",
]
