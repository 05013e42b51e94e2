//! Width parameterizations, an instrumented three-layer training harness,
//! sweep orchestration and hyperparameter-transfer fitting.

pub mod error;
pub mod fit;
pub mod linalg;
pub mod microtrain;
pub mod param;
pub mod rng;
pub mod scalecheck;
pub mod sweep;

pub use error::{Error, Result};
pub use microtrain::{NetworkConfig, RunResult, TaskSpec, TrainConfig};
pub use param::{
    ablate, base_spec, check_stability, gauge_transform, rat, resolve, spec_name, weight_tied_spec, AblationFlags,
    AlignmentAssumption, BaseKind, LayerExponents, LayerRole, OptimizerKind, ParamSpec, Rational, ResolvedLayerHP,
    StabilityReport,
};
