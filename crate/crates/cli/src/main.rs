mod plot;
mod report;
mod svg;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use mupscale_core::fit::{FitOptions, FitSettings, DEFAULT_F, DEFAULT_GRID, DEFAULT_S, RESTARTS};
use mupscale_core::param::{spec_by_name, AblationFlags};
use mupscale_core::scalecheck::{self, ScaleSetup, Tolerances};
use mupscale_core::sweep::{self, RecordStore, SweepConfig};
use mupscale_core::{Error, OptimizerKind};

/// Width-scaling sweeps, transfer fits and first-step scaling checks.
#[derive(Parser)]
#[command(name = "mupscale", version)]
struct Cli {
    #[arg(long, global = true, value_enum, default_value = "info")]
    log_level: Level,
    /// Overrides the master seed of sweeps, fits and checks.
    #[arg(long, env = "MUPSCALE_SEED", global = true, hide_env_values = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum Level {
    Error,
    Warn,
    Info,
    Debug,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run (or resume) a sweep into an append-only record store.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        parallelism: u64,
        #[arg(long)]
        json: bool,
    },
    /// Fit transfer metrics for the specs in a record store.
    Fit {
        #[arg(long)]
        store: PathBuf,
        /// Report only this spec; the best asymptote still uses all of them.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long, default_value_t = DEFAULT_F)]
        f: f64,
        #[arg(long, default_value_t = DEFAULT_S)]
        s: f64,
        #[arg(long, default_value_t = RESTARTS)]
        restarts: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Measure first-step scaling exponents and compare with predictions.
    Check {
        #[arg(long)]
        spec: String,
        #[arg(long, default_value = "adam")]
        optimizer: OptimizerKind,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024")]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        seeds: usize,
        /// One tolerance for every row instead of the per-kind defaults.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Three-metric table for every spec and weight decay in a store.
    AblateReport {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = DEFAULT_F)]
        f: f64,
        #[arg(long, default_value_t = DEFAULT_S)]
        s: f64,
        #[arg(long, default_value_t = RESTARTS)]
        restarts: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Render SVG panels from a fit report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Required input that does not exist.
#[derive(Debug)]
struct MissingInput(String);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing input: {}", self.0)
    }
}

impl std::error::Error for MissingInput {}

/// A check ran to completion but some rows failed.
#[derive(Debug)]
struct CheckFailed;

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("scaling check failed")
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<MissingInput>().is_some() {
        return 4;
    }
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Config(_) | Error::MissingRole(_) | Error::Gauge(_) => 2,
                Error::Io { .. } => 3,
                Error::InsufficientData(_) => 4,
                Error::Shape(_) | Error::Fit(_) => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

struct Log(Level);

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if self.0 >= Level::Info {
            eprintln!("{}", msg.as_ref());
        }
    }
    fn warn(&self, msg: impl AsRef<str>) {
        if self.0 >= Level::Warn {
            eprintln!("warning: {}", msg.as_ref());
        }
    }
    fn debug(&self, msg: impl AsRef<str>) {
        if self.0 >= Level::Debug {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn require(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(MissingInput(path.display().to_string()).into());
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn fit_options(f: f64, s: f64, restarts: usize, seed: Option<u64>) -> anyhow::Result<FitOptions> {
    if !(f > 1.0 && f.is_finite()) {
        return Err(Error::Config(format!("f: must be a finite number above 1, got {f}")).into());
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Config(format!("s: must be non-negative, got {s}")).into());
    }
    if restarts == 0 {
        return Err(Error::Config("restarts: must be positive".into()).into());
    }
    let settings = FitSettings { restarts, seed: seed.unwrap_or(0), ..FitSettings::default() };
    Ok(FitOptions { f, s, grid: DEFAULT_GRID, settings })
}

fn load_records(store: &Path) -> anyhow::Result<Vec<sweep::RunRecord>> {
    require(store)?;
    let records = RecordStore::new(store).load()?;
    if records.is_empty() {
        return Err(MissingInput(format!("{} holds no records", store.display())).into());
    }
    Ok(records)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let log = Log(cli.log_level);
    match cli.cmd {
        Cmd::Sweep { config, out, parallelism, json } => {
            require(&config)?;
            let text = std::fs::read_to_string(&config).map_err(|e| Error::io(config.display().to_string(), e))?;
            let mut cfg = SweepConfig::from_json(&text)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let store = RecordStore::new(&out);
            let planned = sweep::plan(&cfg, &store.load()?)?.len();
            log.info(format!("{planned} planned"));
            let summary = sweep::execute(&cfg, &store, parallelism as usize, |done, total, rec| {
                log.debug(format!(
                    "[{done}/{total}] {} n={} nu={} lambda={} loss={}",
                    rec.spec_name, rec.width, rec.nu, rec.lambda, rec.final_loss
                ));
                if log.0 == Level::Info && (done == total || done % 10 == 0) {
                    eprintln!("[{done}/{total}]");
                }
            })?;
            if json {
                print_json(&serde_json::json!({
                    "store": out,
                    "planned": summary.planned,
                    "executed": summary.executed,
                }))?;
            } else {
                println!("{} planned, {} executed, store {}", summary.planned, summary.executed, out.display());
            }
        }
        Cmd::Fit { store, spec, f, s, restarts, out, json } => {
            let opts = fit_options(f, s, restarts, cli.seed)?;
            let records = load_records(&store)?;
            let rep = report::build(&records, &opts, spec.as_deref())?;
            for n in &rep.notes {
                log.debug(n);
            }
            for r in &rep.specs {
                for d in &r.dropped_widths {
                    log.warn(format!("{}: width {} dropped with {} points", r.name, d.width, d.surviving));
                }
            }
            if let Some(p) = &out {
                write_json(p, &rep)?;
            }
            if json {
                print_json(&rep)?;
            } else {
                print!("{}", rep.table());
            }
        }
        Cmd::Check { spec, optimizer, widths, seeds, tol, out, json } => {
            let ps = spec_by_name(&spec, optimizer)?;
            if widths.len() < 4 || widths.iter().any(|&w| w == 0) {
                return Err(Error::Config("widths: need at least 4 positive widths".into()).into());
            }
            if seeds == 0 {
                return Err(Error::Config("seeds: must be positive".into()).into());
            }
            let tolerances = match tol {
                Some(t) if t > 0.0 => Tolerances::uniform(t),
                Some(t) => return Err(Error::Config(format!("tol: must be positive, got {t}")).into()),
                None => Tolerances::default(),
            };
            let setup = ScaleSetup { seed: cli.seed.unwrap_or(0), ..ScaleSetup::default() };
            log.info(format!("measuring {} over {} widths x {seeds} seeds", ps.name, widths.len()));
            let rep = scalecheck::verify(&ps, &widths, seeds, &setup, &tolerances)?;
            if let Some(p) = &out {
                write_json(p, &rep)?;
            }
            if json {
                print_json(&rep)?;
            } else {
                print!("{}", rep.table());
            }
            if !rep.all_pass() {
                return Err(CheckFailed.into());
            }
        }
        Cmd::AblateReport { store, f, s, restarts, out, json } => {
            let opts = fit_options(f, s, restarts, cli.seed)?;
            let records = load_records(&store)?;
            let expected: Vec<String> = AblationFlags::all().iter().map(|a| a.name()).collect();
            let rep = report::ablation(&records, &opts, &expected)?;
            if !rep.missing.is_empty() {
                log.warn(format!("no records for: {}", rep.missing.join(", ")));
            }
            if let Some(p) = &out {
                write_json(p, &rep)?;
            }
            if json {
                print_json(&rep)?;
            } else {
                print!("{}", rep.table());
            }
        }
        Cmd::Plot { report: path, out } => {
            require(&path)?;
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            let rep: report::FitReport =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let written = plot::write_all(&rep, &out).with_context(|| format!("writing plots to {}", out.display()))?;
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<CheckFailed>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
