//! Sweep planning and execution over spec x width x nu x lambda, with an
//! append-only JSON-lines record store that makes sweeps resumable.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fit::Observation;
use crate::microtrain::{
    param_count, train, Nonlinearity, NetworkConfig, SwitchEvent, Task, TaskSpec, TrainConfig, Wsd,
};
use crate::param::{spec_by_name, LayerRole, OptimizerKind, ParamSpec};
use crate::rng::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WdScaling {
    /// lambda as given at every width.
    ConstantEtaLambda,
    /// lambda * (n_ref / n)^2 with n_ref the smallest width.
    InverseWidthSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    FixedSteps { steps: usize },
    FixedTpp { tpp: f64, tokens_per_step: usize, wd_scaling: WdScaling },
}

impl Regime {
    /// Stable tag stored with every record.
    pub fn tag(&self) -> String {
        match self {
            Regime::FixedSteps { steps } => format!("fixed_steps:{steps}"),
            Regime::FixedTpp { tpp, tokens_per_step, wd_scaling } => {
                let wd = match wd_scaling {
                    WdScaling::ConstantEtaLambda => "constant_eta_lambda",
                    WdScaling::InverseWidthSquared => "inverse_width_squared",
                };
                format!("fixed_tpp:{tpp}:{tokens_per_step}:{wd}")
            }
        }
    }

    /// Training steps at a width with `params` trainable parameters.
    pub fn steps_for(&self, params: usize) -> usize {
        match *self {
            Regime::FixedSteps { steps } => steps,
            Regime::FixedTpp { tpp, tokens_per_step, .. } => {
                (tpp * params as f64 / tokens_per_step as f64).ceil() as usize
            }
        }
    }

    pub fn effective_lambda(&self, lambda: f64, width: usize, n_ref: usize) -> f64 {
        match self {
            Regime::FixedTpp { wd_scaling: WdScaling::InverseWidthSquared, .. } => {
                let r = n_ref as f64 / width as f64;
                lambda * r * r
            }
            _ => lambda,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Regime::FixedSteps { steps } if steps == 0 => Err(Error::Config("regime.steps: must be positive".into())),
            Regime::FixedTpp { tpp, tokens_per_step, .. } => {
                if !(tpp > 0.0 && tpp.is_finite()) {
                    return Err(Error::Config("regime.tpp: must be positive".into()));
                }
                if tokens_per_step == 0 {
                    return Err(Error::Config("regime.tokens_per_step: must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// A spec given either by name or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecEntry {
    Name(String),
    Full(ParamSpec),
}

/// Network settings shared by every run; width and tying come per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetTemplate {
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub layernorm: bool,
    #[serde(default = "d_head_dim")]
    pub head_dim: usize,
}

fn d_head_dim() -> usize {
    64
}

impl Default for NetTemplate {
    fn default() -> Self {
        NetTemplate { nonlinearity: Nonlinearity::Identity, layernorm: false, head_dim: d_head_dim() }
    }
}

/// Training settings shared by every run; steps, eta and lambda come per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTemplate {
    pub batch_size: usize,
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
    /// Steps given as a fraction of the run length.
    #[serde(default)]
    pub switch_events: Vec<RelativeSwitch>,
    #[serde(default)]
    pub frozen_roles: BTreeSet<LayerRole>,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeSwitch {
    pub at_fraction: f64,
    pub role: LayerRole,
    pub c: crate::param::Rational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub version: u32,
    pub specs: Vec<SpecEntry>,
    /// Optimizer used to resolve specs given by name.
    #[serde(default = "d_opt")]
    pub optimizer: OptimizerKind,
    pub widths: Vec<usize>,
    pub nu_grid: Vec<f64>,
    #[serde(default = "d_lambda")]
    pub lambda_grid: Vec<f64>,
    pub regime: Regime,
    #[serde(default)]
    pub network: NetTemplate,
    pub task: TaskSpec,
    pub train: TrainTemplate,
    #[serde(default)]
    pub seed: u64,
}

fn d_opt() -> OptimizerKind {
    OptimizerKind::Adam
}
fn d_lambda() -> Vec<f64> {
    vec![0.0]
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl SweepConfig {
    pub fn from_json(s: &str) -> Result<SweepConfig> {
        let cfg: SweepConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves named specs.
    pub fn resolved_specs(&self) -> Result<Vec<ParamSpec>> {
        self.specs
            .iter()
            .enumerate()
            .map(|(i, s)| match s {
                SpecEntry::Name(n) => {
                    spec_by_name(n, self.optimizer).map_err(|e| Error::Config(format!("specs[{i}]: {e}")))
                }
                SpecEntry::Full(p) => Ok(p.clone()),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("version: expected {CONFIG_VERSION}, got {}", self.version)));
        }
        if self.specs.is_empty() {
            return Err(Error::Config("specs: must not be empty".into()));
        }
        if self.widths.is_empty() || self.widths[0] == 0 || !strictly_increasing(&self.widths) {
            return Err(Error::Config("widths: must be positive and strictly increasing".into()));
        }
        if self.nu_grid.is_empty() || !strictly_increasing(&self.nu_grid) || self.nu_grid.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Config("nu_grid: must be finite and strictly increasing".into()));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("lambda_grid: values must be finite and non-negative".into()));
        }
        self.regime.validate()?;
        self.task.validate().map_err(|e| Error::Config(format!("task: {e}")))?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size: must be positive".into()));
        }
        for (i, s) in self.train.switch_events.iter().enumerate() {
            if !(0.0..1.0).contains(&s.at_fraction) {
                return Err(Error::Config(format!("train.switch_events[{i}].at_fraction: must lie in [0, 1)")));
            }
        }
        let specs = self.resolved_specs()?;
        let mut names = HashSet::new();
        for s in &specs {
            if !names.insert(s.name.clone()) {
                return Err(Error::Config(format!("specs: duplicate name '{}'", s.name)));
            }
            let net = self.network_for(s, self.widths[0]);
            net.validate(s).map_err(|e| Error::Config(format!("spec '{}': {e}", s.name)))?;
        }
        // template validation on a representative run
        self.train_for(specs[0].optimizer, 1.0, 0.0, 4).validate()?;
        Ok(())
    }

    fn network_for(&self, spec: &ParamSpec, width: usize) -> NetworkConfig {
        NetworkConfig {
            width,
            d_in: self.task.d_in,
            d_out: self.task.d_out,
            nonlinearity: self.network.nonlinearity,
            layernorm: self.network.layernorm,
            attention_probe: false,
            head_dim: self.network.head_dim,
            weight_tied: spec.weight_tied,
            seed: 0,
        }
    }

    fn train_for(&self, optimizer: OptimizerKind, eta: f64, lambda: f64, steps: usize) -> TrainConfig {
        let t = &self.train;
        let mut switch: Vec<SwitchEvent> = t
            .switch_events
            .iter()
            .map(|s| SwitchEvent { step: (s.at_fraction * steps as f64).round() as usize, role: s.role, c: s.c })
            .filter(|s| s.step < steps)
            .collect();
        switch.sort_by_key(|s| s.step);
        TrainConfig {
            optimizer,
            steps,
            batch_size: t.batch_size,
            eta,
            lambda,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            schedule: t.schedule,
            grad_clip: t.grad_clip,
            switch_events: switch,
            frozen_roles: t.frozen_roles.clone(),
            trace_stride: 0,
        }
    }

    /// Trainable parameter count at `width` (the spec decides tying).
    pub fn param_count(&self, width: usize, tied: bool) -> usize {
        param_count(width, self.task.d_in, self.task.d_out, self.network.layernorm, tied)
    }

    /// Seed shared by every run at a width: specs, learning rates and weight
    /// decays see the same initialization noise and batches.
    pub fn run_seed(&self, width: usize) -> u64 {
        derive_seed(&[self.seed, width as u64])
    }
}

/// Identity of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub spec_name: String,
    pub width: usize,
    pub nu: f64,
    pub lambda: f64,
    pub regime: String,
    pub seed: u64,
}

impl RunKey {
    fn id(&self) -> (String, usize, u64, u64, String, u64) {
        (self.spec_name.clone(), self.width, self.nu.to_bits(), self.lambda.to_bits(), self.regime.clone(), self.seed)
    }
}

fn ser_loss<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("nan")
    }
}

fn de_loss<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) => match s.as_str() {
            "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
            "nan" | "NaN" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("bad loss value '{other}'"))),
        },
    }
}

/// One line of the record store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub spec_name: String,
    pub width: usize,
    pub nu: f64,
    pub lambda: f64,
    /// Weight decay actually applied after regime scaling.
    pub effective_lambda: f64,
    pub regime: String,
    /// `"inf"` when the run diverged.
    #[serde(serialize_with = "ser_loss", deserialize_with = "de_loss")]
    pub final_loss: f64,
    pub steps_run: usize,
    pub seed: u64,
}

impl RunRecord {
    pub fn key(&self) -> RunKey {
        RunKey {
            spec_name: self.spec_name.clone(),
            width: self.width,
            nu: self.nu,
            lambda: self.lambda,
            regime: self.regime.clone(),
            seed: self.seed,
        }
    }
}

/// Append-only JSON-lines file of [`RunRecord`]s.
#[derive(Debug, Clone)]
pub struct RecordStore {
    path: PathBuf,
}

impl RecordStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RecordStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// All complete records. Torn lines (crash mid-append) are ignored.
    pub fn load(&self) -> Result<Vec<RunRecord>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(self.path.display().to_string(), e)),
        };
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(self.path.display().to_string(), e))?;
        let mut out = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<RunRecord>(line) {
                Ok(r) => out.push(r),
                // a torn append; the writer terminates it before appending more
                Err(e) if e.is_eof() => {}
                Err(e) => {
                    return Err(Error::Config(format!("{} line {}: {e}", self.path.display(), i + 1)));
                }
            }
        }
        Ok(out)
    }

    pub fn open_writer(&self) -> Result<StoreWriter> {
        if let Some(dir) = self.path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&self.path)
            .map_err(|e| Error::io(self.path.display().to_string(), e))?;
        // a torn line from an earlier crash must not swallow the next record
        let len = file.metadata().map_err(|e| Error::io(self.path.display().to_string(), e))?.len();
        if len > 0 {
            let text = std::fs::read(&self.path).map_err(|e| Error::io(self.path.display().to_string(), e))?;
            if text.last() != Some(&b'\n') {
                file.write_all(b"\n").map_err(|e| Error::io(self.path.display().to_string(), e))?;
            }
        }
        Ok(StoreWriter { file, path: self.path.clone() })
    }
}

pub struct StoreWriter {
    file: File,
    path: PathBuf,
}

impl StoreWriter {
    /// Writes one record as a single line in one write call.
    pub fn append(&mut self, rec: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_string(rec).map_err(|e| Error::Config(e.to_string()))?;
        line.push('\n');
        let ctx = || format!("{} (run {} n={} nu={})", self.path.display(), rec.spec_name, rec.width, rec.nu);
        self.file.write_all(line.as_bytes()).map_err(|e| Error::io(ctx(), e))?;
        self.file.flush().map_err(|e| Error::io(ctx(), e))
    }
}

/// Cross product of the config minus keys already in `existing`, in
/// spec, width, lambda, nu order.
pub fn plan(config: &SweepConfig, existing: &[RunRecord]) -> Result<Vec<RunKey>> {
    let done: HashSet<_> = existing.iter().map(|r| r.key().id()).collect();
    let regime = config.regime.tag();
    let mut out = Vec::new();
    for spec in config.resolved_specs()? {
        for &width in &config.widths {
            for &lambda in &config.lambda_grid {
                for &nu in &config.nu_grid {
                    let key = RunKey {
                        spec_name: spec.name.clone(),
                        width,
                        nu,
                        lambda,
                        regime: regime.clone(),
                        seed: config.run_seed(width),
                    };
                    if !done.contains(&key.id()) {
                        out.push(key);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Planned step count per width.
pub fn planned_steps(config: &SweepConfig, spec: &ParamSpec) -> Vec<(usize, usize)> {
    config
        .widths
        .iter()
        .map(|&n| (n, config.regime.steps_for(config.param_count(n, spec.weight_tied))))
        .collect()
}

/// Trains one keyed run.
pub fn run_one(config: &SweepConfig, spec: &ParamSpec, task: &Task, key: &RunKey) -> Result<RunRecord> {
    let n_ref = config.widths[0];
    let mut net = config.network_for(spec, key.width);
    net.seed = key.seed;
    let steps = config.regime.steps_for(net.param_count());
    let eff = config.regime.effective_lambda(key.lambda, key.width, n_ref);
    let tc = config.train_for(spec.optimizer, key.nu.exp2(), eff, steps);
    let res = train(spec, &net, task, &tc)?;
    Ok(RunRecord {
        schema_version: SCHEMA_VERSION,
        spec_name: key.spec_name.clone(),
        width: key.width,
        nu: key.nu,
        lambda: key.lambda,
        effective_lambda: eff,
        regime: key.regime.clone(),
        final_loss: if res.diverged { f64::INFINITY } else { res.final_loss },
        steps_run: res.steps_run,
        seed: key.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecuteSummary {
    pub planned: usize,
    pub executed: usize,
}

/// Runs every planned key on `parallelism` threads; a single writer
/// appends records as they finish. `progress` sees each appended record.
pub fn execute(
    config: &SweepConfig,
    store: &RecordStore,
    parallelism: usize,
    mut progress: impl FnMut(usize, usize, &RunRecord),
) -> Result<ExecuteSummary> {
    config.validate()?;
    let keys = plan(config, &store.load()?)?;
    let planned = keys.len();
    if planned == 0 {
        return Ok(ExecuteSummary { planned, executed: 0 });
    }
    let specs: BTreeMap<String, ParamSpec> =
        config.resolved_specs()?.into_iter().map(|s| (s.name.clone(), s)).collect();
    let task = Task::build(&config.task)?;
    let mut writer = store.open_writer()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("parallelism: {e}")))?;
    let (tx, rx) = mpsc::channel::<Result<RunRecord>>();
    let mut executed = 0;
    let mut first_err = None;
    std::thread::scope(|scope| {
        let (keys, specs, task) = (&keys, &specs, &task);
        scope.spawn(move || {
            pool.install(|| {
                keys.par_iter().for_each_with(tx, |tx, k| {
                    let _ = tx.send(run_one(config, &specs[&k.spec_name], task, k));
                });
            });
        });
        for msg in rx {
            if first_err.is_some() {
                continue;
            }
            match msg.and_then(|rec| writer.append(&rec).map(|_| rec)) {
                Ok(rec) => {
                    executed += 1;
                    progress(executed, planned, &rec);
                }
                Err(e) => first_err = Some(e),
            }
        }
    });
    match first_err {
        Some(e) => Err(e),
        None => Ok(ExecuteSummary { planned, executed }),
    }
}

/// Observations of one spec at one lambda, for fitting.
pub fn observations(records: &[RunRecord], spec_name: &str, lambda: f64) -> Vec<Observation> {
    records
        .iter()
        .filter(|r| r.spec_name == spec_name && r.lambda == lambda)
        .map(|r| Observation { width: r.width, nu: r.nu, loss: r.final_loss })
        .collect()
}

/// Distinct `(spec_name, lambda)` groups in first-seen order.
pub fn groups(records: &[RunRecord]) -> Vec<(String, f64)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in records {
        if seen.insert((r.spec_name.clone(), r.lambda.to_bits())) {
            out.push((r.spec_name.clone(), r.lambda));
        }
    }
    out
}
