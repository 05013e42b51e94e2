//! A three-layer network `f = n^-a_v V z`, `z = n^-a_w W phi(h)`,
//! `h = n^-a_u U x` with per-layer optimizer scaling and instrumentation.

mod attention;
mod network;
mod optim;
mod task;
mod trace;
mod train;

pub use attention::{attention_logit_ratio, measure_attention_logit_ratio, AttnProbe, ATTN_ROWS};
pub use network::{init_network, mse, mse_loss, param_count, Forward, NetworkConfig, NetworkState, Nonlinearity, Params};
pub use optim::{lr_schedule, Optimizer, SwitchEvent, TrainConfig, Wsd};
pub use task::{Task, TaskKind, TaskSpec};
pub use trace::{record, NormTrace, TraceRow};
pub use train::{train, train_from, RunResult, PROBE_ROWS};
