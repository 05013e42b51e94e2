use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{pow_width, LayerRole, OptimizerKind, Rational};

use super::network::{NetworkState, Params};

/// Warmup / stable / decay fractions of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wsd {
    pub warmup_frac: f64,
    pub stable_frac: f64,
    pub decay_frac: f64,
}

impl Default for Wsd {
    fn default() -> Self {
        Wsd { warmup_frac: 0.2, stable_frac: 0.6, decay_frac: 0.2 }
    }
}

impl Wsd {
    pub fn constant() -> Self {
        Wsd { warmup_frac: 0.0, stable_frac: 1.0, decay_frac: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.warmup_frac, self.stable_frac, self.decay_frac];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("schedule fractions must lie in [0, 1]".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "schedule fractions sum to {}, expected 1",
                parts.iter().sum::<f64>()
            )));
        }
        Ok(())
    }
}

/// Learning-rate multiplier in [0, 1] at step `t` of `total`.
pub fn lr_schedule(t: usize, total: usize, w: &Wsd) -> f64 {
    let tf = t as f64;
    let tt = total as f64;
    let warm = w.warmup_frac * tt;
    let decay = w.decay_frac * tt;
    if warm > 0.0 && tf < warm {
        return tf / warm;
    }
    let decay_start = tt - decay;
    if decay > 0.0 && tf >= decay_start {
        return ((tt - tf) / decay).clamp(0.0, 1.0);
    }
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub step: usize,
    pub role: LayerRole,
    /// New learning-rate exponent from `step` on.
    pub c: Rational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub steps: usize,
    pub batch_size: usize,
    pub eta: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "d_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "d_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "d_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub schedule: Wsd,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub switch_events: Vec<SwitchEvent>,
    #[serde(default)]
    pub frozen_roles: BTreeSet<LayerRole>,
    /// Record the norm trace at steps 0, 1 and every `trace_stride` steps.
    /// Zero disables tracing.
    #[serde(default)]
    pub trace_stride: usize,
}

fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.95
}
fn d_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, steps: usize, batch_size: usize, eta: f64) -> Self {
        TrainConfig {
            optimizer,
            steps,
            batch_size,
            eta,
            lambda: 0.0,
            adam_beta1: d_beta1(),
            adam_beta2: d_beta2(),
            adam_eps: d_eps(),
            schedule: Wsd::default(),
            grad_clip: None,
            switch_events: Vec::new(),
            frozen_roles: BTreeSet::new(),
            trace_stride: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config("adam betas must lie in [0, 1)".into()));
            }
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if c <= 0.0 {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        let mut last = 0;
        for e in &self.switch_events {
            if e.step < last {
                return Err(Error::Config("switch_events must be sorted by step".into()));
            }
            if e.step >= self.steps {
                return Err(Error::Config(format!("switch at step {} is past the horizon", e.step)));
            }
            last = e.step;
        }
        Ok(())
    }
}

/// Per-layer SGD / AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub cfg: TrainConfig,
    m: Option<Params>,
    v: Option<Params>,
    updates: u64,
}

impl Optimizer {
    pub fn new(cfg: TrainConfig) -> Self {
        Optimizer { cfg, m: None, v: None, updates: 0 }
    }

    /// Learning-rate exponent of `role` at step `t`, after switch events.
    pub fn lr_exponent(&self, state: &NetworkState, role: LayerRole, t: usize) -> Option<Rational> {
        let mut c = state.spec.exps(role).ok()?.c;
        for e in &self.cfg.switch_events {
            if e.role == role && e.step <= t {
                c = Some(e.c);
            }
        }
        c
    }

    /// `schedule(t) * eta * n^-c_l`.
    pub fn layer_lr(&self, state: &NetworkState, role: LayerRole, t: usize) -> f64 {
        let n = state.cfg.width as f64;
        let c = self.lr_exponent(state, role, t).unwrap_or_default();
        lr_schedule(t, self.cfg.steps, &self.cfg.schedule) * self.cfg.eta * pow_width(n, -c)
    }

    /// `lambda * n^-d_l`; LayerNorm parameters are never decayed.
    pub fn layer_wd(&self, state: &NetworkState, role: LayerRole) -> f64 {
        if role == LayerRole::LayerNorm {
            return 0.0;
        }
        let n = state.cfg.width as f64;
        match state.spec.exps(role).ok().and_then(|e| e.d) {
            Some(d) => self.cfg.lambda * pow_width(n, -d),
            None => 0.0,
        }
    }

    /// Applies one update at step `t`.
    pub fn step(&mut self, state: &mut NetworkState, grads: &Params, t: usize) {
        let mut clip = 1.0;
        if let Some(maxn) = self.cfg.grad_clip {
            let gn = grads.sq_norm().sqrt();
            if gn > maxn {
                clip = maxn / gn;
            }
        }
        let lrs: Vec<(f64, f64)> = [LayerRole::Input, LayerRole::Hidden, LayerRole::Output, LayerRole::LayerNorm]
            .iter()
            .map(|&r| {
                if self.cfg.frozen_roles.contains(&r) {
                    (0.0, 0.0)
                } else {
                    (self.layer_lr(state, r, t), self.layer_wd(state, r))
                }
            })
            .collect();
        self.updates += 1;
        match self.cfg.optimizer {
            OptimizerKind::Sgd => {
                for (i, ((_, p), (_, g))) in state.params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
                    let (lr, wd) = lrs[i];
                    if lr == 0.0 {
                        continue;
                    }
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= lr * clip * gv + lr * wd * *pv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let m = self.m.get_or_insert_with(|| Params::zeros_like(grads));
                let v = self.v.get_or_insert_with(|| Params::zeros_like(grads));
                let (b1, b2, eps) = (self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps);
                let bc1 = 1.0 - b1.powi(self.updates as i32);
                let bc2 = 1.0 - b2.powi(self.updates as i32);
                let ps = state.params.tensors_mut();
                let gs = grads.tensors();
                let ms = m.tensors_mut();
                let vs = v.tensors_mut();
                for (i, (((p, g), mm), vv)) in ps.into_iter().zip(gs).zip(ms).zip(vs).enumerate() {
                    let (lr, wd) = lrs[i];
                    let frozen = lr == 0.0 && self.cfg.frozen_roles.contains(&p.0);
                    if frozen {
                        continue;
                    }
                    for j in 0..p.1.len() {
                        let gj = clip * g.1[j];
                        mm.1[j] = b1 * mm.1[j] + (1.0 - b1) * gj;
                        vv.1[j] = b2 * vv.1[j] + (1.0 - b2) * gj * gj;
                        let mh = mm.1[j] / bc1;
                        let vh = vv.1[j] / bc2;
                        let th = p.1[j];
                        p.1[j] = th - lr * mh / (vh.sqrt() + eps) - lr * wd * th;
                    }
                }
            }
        }
    }
}
