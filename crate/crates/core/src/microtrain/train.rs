use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{rms, Mat};
use crate::param::ParamSpec;

use super::network::{init_network, mse, mse_loss, NetworkConfig, NetworkState};
use super::optim::{Optimizer, TrainConfig};
use super::task::Task;
use super::trace::{record, NormTrace};

/// Probe rows used for trace measurements (taken from the held-out set).
pub const PROBE_ROWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Training-batch loss before each update.
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    /// Mean loss on the held-out batch; `+inf` when diverged.
    pub final_loss: f64,
    pub diverged: bool,
    pub steps_run: usize,
    pub trace: NormTrace,
}

fn is_recorded(t: usize, total: usize, stride: usize) -> bool {
    stride > 0 && (t <= 1 || t % stride == 0 || t == total)
}

fn probe_of(task: &Task) -> Mat {
    let rows = PROBE_ROWS.min(task.eval_x.rows);
    Mat::from_vec(rows, task.eval_x.cols, task.eval_x.data[..rows * task.eval_x.cols].to_vec())
}

/// Trains from a fresh initialization.
pub fn train(spec: &ParamSpec, net: &NetworkConfig, task: &Task, cfg: &TrainConfig) -> Result<RunResult> {
    let state = init_network(spec, net)?;
    Ok(train_from(state, task, cfg)?.0)
}

/// Trains an existing state and returns it alongside the result.
pub fn train_from(mut state: NetworkState, task: &Task, cfg: &TrainConfig) -> Result<(RunResult, NetworkState)> {
    cfg.validate()?;
    let eval = |s: &NetworkState| -> Result<f64> {
        let fwd = s.forward(&task.eval_x)?;
        Ok(mse_loss(&fwd.f, &task.eval_y))
    };
    let mut opt = Optimizer::new(cfg.clone());
    let probe = probe_of(task);
    let mut trace = NormTrace::default();
    let total = cfg.steps;
    let stride = cfg.trace_stride;
    let initial_loss = eval(&state)?;
    if is_recorded(0, total, stride) {
        record(&mut trace, 0, None, &state, &probe);
    }
    let mut losses = Vec::with_capacity(total);
    let mut diverged = !initial_loss.is_finite();
    let mut steps_run = 0;
    for t in 0..total {
        if diverged {
            break;
        }
        let (bx, by) = task.batch(state.cfg.seed, t, cfg.batch_size);
        let fwd = state.forward(&bx)?;
        let (loss, df) = mse(&fwd.f, &by);
        losses.push(loss);
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        let grads = state.backward(&fwd, &df)?;
        if is_recorded(t, total, stride) {
            trace.push(t, "grad_rms", "Input", rms(&grads.u.data));
            trace.push(t, "grad_rms", "Hidden", rms(&grads.w.data));
            if !state.cfg.weight_tied {
                trace.push(t, "grad_rms", "Output", rms(&grads.v.data));
            }
        }
        let prev = if is_recorded(t + 1, total, stride) { Some(state.clone()) } else { None };
        opt.step(&mut state, &grads, t);
        steps_run = t + 1;
        if let Some(p) = prev {
            record(&mut trace, t + 1, Some(&p), &state, &probe);
        }
    }
    let mut final_loss = if diverged { f64::INFINITY } else { eval(&state)? };
    if !final_loss.is_finite() {
        diverged = true;
        final_loss = f64::INFINITY;
    }
    Ok((RunResult { losses, initial_loss, final_loss, diverged, steps_run, trace }, state))
}
