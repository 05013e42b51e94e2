//! Hyperparameter-transfer fitting: filtering, smoothing, optimum
//! extraction, width power laws, the joint loss surface and the transfer
//! metrics.

mod curves;
mod joint;
pub mod lm;
mod metrics;
mod pipeline;
mod powerlaw;
pub mod spline;
pub mod synth;

pub use curves::{
    extract_optimum, filter_runs, fit_centered_quadratic, fit_curvature, interpolate, CurvatureFit, DroppedWidth,
    FilterOutcome, Observation, WidthCurve, DEFAULT_F, DEFAULT_GRID, DEFAULT_S, MIN_POINTS,
};
pub use joint::{joint_fit, JointFit, JointParams};
pub use metrics::{
    compute_e, compute_metrics, kappa, log_log_slope, normalize_coordinates, normalized_curvature_slope, Normalized,
    NormalizedCurve, TransferMetrics,
};
pub use pipeline::{fit_spec, metrics_for, FitOptions, SpecFit, WidthSummary};
pub use powerlaw::{
    beta_min_grid, eval_h, fit_h_law, fit_loss_law, fit_nu_law, huber_objective, refine_loss_law,
    resolve_beta_degeneracy, BetaResolution, FitSettings, HLawFit, NuLawFit, PowerLawFit, EXPONENT_CAP,
    HUBER_DELTA, RESTARTS,
};
