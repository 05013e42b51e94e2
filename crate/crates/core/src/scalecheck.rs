//! First-step width-scaling exponents: symbolic predictions from a spec and
//! empirical slopes from instrumented single-step runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::log_log_slope;
use crate::microtrain::{
    measure_attention_logit_ratio, train, NetworkConfig, Nonlinearity, Task, TaskKind, TaskSpec, TrainConfig, Wsd,
};
use crate::param::{rational_to_f64, AlignmentExponents, LayerRole, OptimizerKind, ParamSpec};
use crate::rng::derive_seed;

/// Alignment exponents as reals (measured values are not rational).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub rho_w: f64,
    pub omega_w: f64,
    pub sigma_w: f64,
    pub rho_v: f64,
    pub omega_v: f64,
    pub sigma_v: f64,
}

impl From<AlignmentExponents> for Alignment {
    fn from(a: AlignmentExponents) -> Self {
        Alignment {
            rho_w: rational_to_f64(a.rho_w),
            omega_w: rational_to_f64(a.omega_w),
            sigma_w: rational_to_f64(a.sigma_w),
            rho_v: rational_to_f64(a.rho_v),
            omega_v: rational_to_f64(a.omega_v),
            sigma_v: rational_to_f64(a.sigma_v),
        }
    }
}

impl Alignment {
    fn get(&self, q: &str) -> Option<f64> {
        Some(match q {
            "align_rho_w" => self.rho_w,
            "align_omega_w" => self.omega_w,
            "align_sigma_w" => self.sigma_w,
            "align_rho_v" => self.rho_v,
            "align_omega_v" => self.omega_v,
            "align_sigma_v" => self.sigma_v,
            _ => return None,
        })
    }
}

pub const ALIGNMENT_QUANTITIES: [&str; 6] =
    ["align_rho_w", "align_omega_w", "align_sigma_w", "align_rho_v", "align_omega_v", "align_sigma_v"];

struct Abcd {
    a: f64,
    b: f64,
    c: f64,
}

fn abcd(spec: &ParamSpec, role: LayerRole) -> Result<Abcd> {
    let e = spec.exps(role)?;
    let f = |v: Option<crate::param::Rational>, what: &str| {
        v.map(rational_to_f64).ok_or_else(|| Error::Config(format!("spec '{}' lacks {what} for {role}", spec.name)))
    };
    Ok(Abcd { a: f(e.a, "a")?, b: f(e.b, "b")?, c: f(e.c, "c")? })
}

/// Predicted width exponents of every first-step quantity.
///
/// Norms are RMS over entries, inputs have width-independent RMS and the
/// nonlinearity passes exponents through. Keys match [`measure`].
pub fn predict_exponents(spec: &ParamSpec, optimizer: OptimizerKind, al: &Alignment) -> Result<BTreeMap<String, f64>> {
    let u = abcd(spec, LayerRole::Input)?;
    let w = abcd(spec, LayerRole::Hidden)?;
    let v = abcd(spec, LayerRole::Output)?;
    let mut m = BTreeMap::new();
    let h0 = -(u.a + u.b);
    let z0 = 0.5 - w.a - w.b + h0;
    let f0 = 0.5 - v.a - v.b + z0;
    // backward pass at initialization
    let g_v = -v.a + z0;
    let dz = -v.a - v.b;
    let g_w = -w.a + dz + h0;
    let g_u = -u.a + 0.5 - w.a - w.b + dz;
    let (du, dw, dv) = match optimizer {
        OptimizerKind::Adam => (-u.c, -w.c, -v.c),
        OptimizerKind::Sgd => (-u.c + g_u, -w.c + g_w, -v.c + g_v),
    };
    let dh1 = -u.a + du;
    let z_wu = -w.a + al.rho_w + dw + h0;
    let z_au = -w.a + al.omega_w - w.b + dh1;
    let z_so = -w.a + al.sigma_w + dw + dh1;
    let dz1 = z_wu.max(z_au).max(z_so);
    let f_wu = -v.a + al.rho_v + dv + z0;
    let f_au = -v.a + al.omega_v - v.b + dz1;
    let f_so = -v.a + al.sigma_v + dv + dz1;
    let df1 = f_wu.max(f_au).max(f_so);
    for (k, x) in [
        ("norm_h0", h0),
        ("norm_z0", z0),
        ("norm_f0", f0),
        ("grad_u", g_u),
        ("grad_w", g_w),
        ("grad_v", g_v),
        ("norm_dU1", du),
        ("norm_dW1", dw),
        ("norm_dV1", dv),
        ("norm_dh1", dh1),
        ("norm_dz1", dz1),
        ("norm_df1", df1),
        ("term_wu_z", z_wu),
        ("term_au_z", z_au),
        ("term_so_z", z_so),
        ("term_wu_f", f_wu),
        ("term_au_f", f_au),
        ("term_so_f", f_so),
    ] {
        m.insert(k.to_string(), x);
    }
    for q in ALIGNMENT_QUANTITIES {
        m.insert(q.to_string(), al.get(q).unwrap());
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentMeasurement {
    pub quantity: String,
    pub widths: Vec<usize>,
    /// Geometric mean over seeds per width.
    pub values: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub n_seeds: usize,
    /// Seeds dropped because the step diverged.
    #[serde(default)]
    pub excluded_seeds: usize,
}

/// Log-log regression of geometric means. Needs at least 4 widths.
pub fn regress(quantity: &str, widths: &[usize], samples: &[Vec<f64>], excluded: usize) -> Result<ExponentMeasurement> {
    if widths.len() < 4 {
        return Err(Error::InsufficientData(format!("{quantity}: slope needs at least 4 widths")));
    }
    let mut values = Vec::with_capacity(widths.len());
    for (n, s) in widths.iter().zip(samples) {
        let pos: Vec<f64> = s.iter().copied().filter(|v| *v > 0.0 && v.is_finite()).collect();
        if pos.is_empty() {
            return Err(Error::InsufficientData(format!("{quantity}: no positive samples at width {n}")));
        }
        values.push((pos.iter().map(|v| v.ln()).sum::<f64>() / pos.len() as f64).exp());
    }
    let x: Vec<f64> = widths.iter().map(|&n| n as f64).collect();
    let (slope, _, se) = log_log_slope(&x, &values);
    let n_seeds = samples.iter().map(|s| s.len()).min().unwrap_or(0);
    Ok(ExponentMeasurement {
        quantity: quantity.to_string(),
        widths: widths.to_vec(),
        values,
        slope,
        slope_stderr: se,
        n_seeds,
        excluded_seeds: excluded,
    })
}

/// Network, task and optimizer settings for single-step measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSetup {
    pub d_in: usize,
    pub d_out: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub adam_eps: f64,
    /// Gaussian targets are multiplied by this so the loss derivative is
    /// set by the targets rather than by the network's own output.
    pub target_scale: f64,
    pub nonlinearity: Nonlinearity,
    pub layernorm: bool,
    pub seed: u64,
}

impl Default for ScaleSetup {
    /// Wide inputs and outputs keep probe/batch correlations and the
    /// single readout direction from biasing the alignment slopes; large
    /// targets keep the output's self-interaction out of the gradient.
    fn default() -> Self {
        ScaleSetup {
            d_in: 8192,
            d_out: 8192,
            batch_size: 4,
            eta: 1e-3,
            adam_eps: 1e-30,
            target_scale: 1e6,
            nonlinearity: Nonlinearity::Identity,
            layernorm: false,
            seed: 0,
        }
    }
}

fn trace_quantities() -> Vec<(&'static str, usize, &'static str, &'static str)> {
    vec![
        ("norm_h0", 0, "act_rms", "h"),
        ("norm_z0", 0, "act_rms", "z"),
        ("norm_f0", 0, "act_rms", "f"),
        ("grad_u", 0, "grad_rms", "Input"),
        ("grad_w", 0, "grad_rms", "Hidden"),
        ("grad_v", 0, "grad_rms", "Output"),
        ("norm_dU1", 1, "dweight_rms", "Input"),
        ("norm_dW1", 1, "dweight_rms", "Hidden"),
        ("norm_dV1", 1, "dweight_rms", "Output"),
        ("norm_dh1", 1, "dact_rms", "h"),
        ("norm_dz1", 1, "dact_rms", "z"),
        ("norm_df1", 1, "dact_rms", "f"),
        ("term_wu_z", 1, "term_wu", "z"),
        ("term_au_z", 1, "term_au", "z"),
        ("term_so_z", 1, "term_so", "z"),
        ("term_wu_f", 1, "term_wu", "f"),
        ("term_au_f", 1, "term_au", "f"),
        ("term_so_f", 1, "term_so", "f"),
        ("align_rho_w", 1, "align_rho", "Hidden"),
        ("align_omega_w", 1, "align_omega", "Hidden"),
        ("align_sigma_w", 1, "align_sigma", "Hidden"),
        ("align_rho_v", 1, "align_rho", "Output"),
        ("align_omega_v", 1, "align_omega", "Output"),
        ("align_sigma_v", 1, "align_sigma", "Output"),
    ]
}

/// One optimizer step per `(width, seed)`; slopes of every traced quantity.
pub fn measure(spec: &ParamSpec, widths: &[usize], n_seeds: usize, setup: &ScaleSetup) -> Result<Vec<ExponentMeasurement>> {
    if widths.len() < 4 {
        return Err(Error::Config("widths: need at least 4".into()));
    }
    if n_seeds == 0 {
        return Err(Error::Config("seeds: need at least 1".into()));
    }
    let quantities = trace_quantities();
    let mut samples: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); widths.len()]; quantities.len()];
    let mut excluded = 0;
    for (wi, &n) in widths.iter().enumerate() {
        for s in 0..n_seeds {
            let seed = derive_seed(&[setup.seed, s as u64]);
            let mut task = Task::build(&TaskSpec {
                kind: TaskKind::GaussianTargets,
                d_in: setup.d_in,
                d_out: setup.d_out,
                dataset_size: setup.batch_size.max(1) * 4,
                noise_std: 0.0,
                seed,
                teacher_width: 0,
                eval_size: 64,
            })?;
            task.y = task.y.clone().scale(setup.target_scale);
            task.eval_y = task.eval_y.clone().scale(setup.target_scale);
            let mut net = NetworkConfig::new(n, setup.d_in, setup.d_out);
            net.nonlinearity = setup.nonlinearity;
            net.layernorm = setup.layernorm;
            net.weight_tied = spec.weight_tied;
            net.seed = seed;
            let mut tc = TrainConfig::new(spec.optimizer, 1, setup.batch_size, setup.eta);
            tc.schedule = Wsd::constant();
            tc.adam_eps = setup.adam_eps;
            tc.trace_stride = 1;
            let res = train(spec, &net, &task, &tc)?;
            if res.diverged {
                excluded += 1;
                continue;
            }
            for (qi, (_, step, q, role)) in quantities.iter().enumerate() {
                if let Some(v) = res.trace.get(*step, q, role) {
                    samples[qi][wi].push(v);
                }
            }
        }
    }
    let mut out = Vec::new();
    for (qi, (name, ..)) in quantities.iter().enumerate() {
        if samples[qi].iter().all(|s| s.is_empty()) {
            continue;
        }
        // alignment ratios are raw ratios; their slope is the exponent
        out.push(regress(name, widths, &samples[qi], excluded)?);
    }
    Ok(out)
}

/// Slope of the attention logit ratio over head dimensions.
pub fn measure_attention(head_dims: &[usize], n_seeds: usize, seed: u64) -> Result<ExponentMeasurement> {
    let samples: Vec<Vec<f64>> = head_dims
        .iter()
        .map(|&d| (0..n_seeds).map(|s| measure_attention_logit_ratio(d, derive_seed(&[seed, s as u64]))).collect())
        .collect();
    regress("attn_logit", head_dims, &samples, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub update: f64,
    pub alignment: f64,
    pub init: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { update: 0.15, alignment: 0.05, init: 0.1 }
    }
}

impl Tolerances {
    pub fn uniform(t: f64) -> Self {
        Tolerances { update: t, alignment: t, init: t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub quantity: String,
    pub measured: f64,
    pub stderr: f64,
    pub predicted: f64,
    /// Predictions under the Init and Full alignment assumptions.
    pub predicted_init: f64,
    pub predicted_full: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub spec: String,
    pub optimizer: OptimizerKind,
    /// Spec used for the predictions when it differs from the measured one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub measured_alignment: Alignment,
    pub rows: Vec<ReportRow>,
}

impl ScalingReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, q: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.quantity == q)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<14} {:>9} {:>8} {:>10} {:>8} {:>8} {:>6}  result\n",
            "quantity", "measured", "stderr", "predicted", "init", "full", "tol"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<14} {:>9.4} {:>8.4} {:>10.4} {:>8.3} {:>8.3} {:>6.3}  {}\n",
                r.quantity,
                r.measured,
                r.stderr,
                r.predicted,
                r.predicted_init,
                r.predicted_full,
                r.tolerance,
                if r.pass { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Quantities checked by [`verify`].
pub const VERIFIED: [&str; 12] = [
    "norm_h0",
    "norm_z0",
    "norm_f0",
    "norm_dh1",
    "norm_dz1",
    "norm_df1",
    "align_rho_w",
    "align_omega_w",
    "align_sigma_w",
    "align_rho_v",
    "align_omega_v",
    "align_sigma_v",
];

fn measured_alignment(ms: &[ExponentMeasurement]) -> Result<Alignment> {
    let get = |q: &str| {
        ms.iter()
            .find(|m| m.quantity == q)
            .map(|m| m.slope)
            .ok_or_else(|| Error::InsufficientData(format!("no measurement of {q}")))
    };
    Ok(Alignment {
        rho_w: get("align_rho_w")?,
        omega_w: get("align_omega_w")?,
        sigma_w: get("align_sigma_w")?,
        rho_v: get("align_rho_v")?,
        omega_v: get("align_omega_v")?,
        sigma_v: get("align_sigma_v")?,
    })
}

/// Compares measurements of `spec` with predictions from `reference`.
/// Update exponents are predicted with the measured alignment slopes;
/// alignment slopes themselves are checked against the Init values.
pub fn compare(
    spec: &ParamSpec,
    reference: &ParamSpec,
    ms: &[ExponentMeasurement],
    tol: &Tolerances,
) -> Result<ScalingReport> {
    let opt = reference.optimizer;
    let al = measured_alignment(ms)?;
    let init_al: Alignment = AlignmentExponents::of(crate::param::AlignmentAssumption::Init).into();
    let full_al: Alignment = AlignmentExponents::of(crate::param::AlignmentAssumption::Full).into();
    let pred = predict_exponents(reference, opt, &al)?;
    let pred_init = predict_exponents(reference, opt, &init_al)?;
    let pred_full = predict_exponents(reference, opt, &full_al)?;
    let mut rows = Vec::new();
    for q in VERIFIED {
        let Some(m) = ms.iter().find(|m| m.quantity == q) else { continue };
        let (predicted, tolerance) = if q.starts_with("align_") {
            (pred_init[q], tol.alignment)
        } else if q.ends_with('0') {
            (pred[q], tol.init)
        } else {
            (pred[q], tol.update)
        };
        rows.push(ReportRow {
            quantity: q.to_string(),
            measured: m.slope,
            stderr: m.slope_stderr,
            predicted,
            predicted_init: pred_init[q],
            predicted_full: pred_full[q],
            tolerance,
            pass: (m.slope - predicted).abs() <= tolerance,
        });
    }
    Ok(ScalingReport {
        spec: spec.name.clone(),
        optimizer: opt,
        reference: (reference.name != spec.name).then(|| reference.name.clone()),
        measured_alignment: al,
        rows,
    })
}

/// Measures `spec` and checks it against its own predictions.
pub fn verify(
    spec: &ParamSpec,
    widths: &[usize],
    n_seeds: usize,
    setup: &ScaleSetup,
    tol: &Tolerances,
) -> Result<ScalingReport> {
    let ms = measure(spec, widths, n_seeds, setup)?;
    compare(spec, spec, &ms, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeComparison {
    pub max_rel_dev: f64,
    pub steps: usize,
    pub pass: bool,
}

/// Trains two gauge-related specs from coupled seeds and compares their
/// training-loss trajectories step by step.
pub fn verify_gauge(
    a: &ParamSpec,
    b: &ParamSpec,
    net: &NetworkConfig,
    task: &Task,
    cfg: &TrainConfig,
    tol: f64,
) -> Result<GaugeComparison> {
    if cfg.lambda != 0.0 {
        return Err(Error::Config("gauge comparison needs lambda = 0".into()));
    }
    if cfg.optimizer == OptimizerKind::Adam && cfg.adam_eps > 1e-12 {
        return Err(Error::Config("gauge comparison needs adam_eps <= 1e-12".into()));
    }
    let ra = train(a, net, task, cfg)?;
    let rb = train(b, net, task, cfg)?;
    let steps = ra.losses.len().min(rb.losses.len());
    let mut max_rel_dev: f64 = if ra.losses.len() != rb.losses.len() { f64::INFINITY } else { 0.0 };
    for (x, y) in ra.losses.iter().zip(&rb.losses) {
        let d = (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
        max_rel_dev = max_rel_dev.max(if d.is_nan() { f64::INFINITY } else { d });
    }
    Ok(GaugeComparison { max_rel_dev, steps, pass: max_rel_dev <= tol })
}
