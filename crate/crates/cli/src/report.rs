//! Fit reports: everything the plots need, so rendering never refits.

use mupscale_core::fit::{
    fit_spec, normalize_coordinates, normalized_curvature_slope, DroppedWidth, FitOptions, JointParams, NormalizedCurve,
    PowerLawFit, SpecFit, WidthSummary,
};
use mupscale_core::sweep::{groups, observations, RunRecord};
use mupscale_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    pub degenerate_beta_resolved: bool,
    pub r_inf_clamped: bool,
    pub alpha_capped: bool,
    pub beta_capped: bool,
    pub gamma_capped: bool,
    /// The width dependence of nu* was negligible.
    pub beta_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub width: usize,
    pub raw: Vec<(f64, f64)>,
    pub interpolated: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecReport {
    pub name: String,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kappa: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "R_inf")]
    pub r_inf: f64,
    #[serde(rename = "L_inf")]
    pub l_inf: f64,
    pub flags: Flags,
    pub widths: Vec<WidthSummary>,
    pub dropped_widths: Vec<DroppedWidth>,
    pub loss_law: PowerLawFit,
    pub nu_law: PowerLawFit,
    pub h_law: PowerLawFit,
    pub joint: JointParams,
    pub joint_objective: f64,
    pub curves: Vec<CurveData>,
    pub normalized: Vec<NormalizedCurve>,
    pub normalized_curvature_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub version: u32,
    pub options: FitOptions,
    /// Best asymptote over every spec fitted from the store.
    pub l_inf_best: f64,
    pub specs: Vec<SpecReport>,
    pub notes: Vec<String>,
}

fn spec_report(fit: &SpecFit, lambda: f64, l_inf_best: f64) -> SpecReport {
    let m = fit.metrics(l_inf_best);
    let nu = &fit.nu_law.fit;
    let norm = normalize_coordinates(
        &fit.curves,
        (fit.loss_law.asymptote, fit.loss_law.coef, fit.loss_law.exponent),
        (nu.asymptote, nu.coef, nu.exponent),
    );
    SpecReport {
        name: fit.name.clone(),
        lambda,
        alpha: m.alpha,
        beta: m.beta,
        gamma: m.gamma,
        kappa: m.kappa,
        e: m.e,
        r_inf: m.r_inf,
        l_inf: m.l_inf,
        flags: Flags {
            degenerate_beta_resolved: m.degenerate_beta_resolved,
            r_inf_clamped: m.r_inf_clamped,
            alpha_capped: fit.loss_law.capped,
            beta_capped: nu.capped,
            gamma_capped: fit.h_law.fit.capped,
            beta_degenerate: nu.degenerate,
        },
        widths: fit.widths.clone(),
        dropped_widths: fit.dropped.clone(),
        loss_law: fit.loss_law.clone(),
        nu_law: nu.clone(),
        h_law: fit.h_law.fit.clone(),
        joint: fit.joint.params,
        joint_objective: fit.joint.objective,
        curves: fit
            .curves
            .iter()
            .map(|c| CurveData { width: c.width, raw: c.points.clone(), interpolated: c.interpolated.clone().unwrap_or_default() })
            .collect(),
        normalized_curvature_slope: normalized_curvature_slope(&norm),
        normalized: norm.curves,
    }
}

/// Fits every `(spec, lambda)` group, keeping those selected by `filter`.
/// Groups without enough data fail only when selected.
pub fn build(records: &[RunRecord], opts: &FitOptions, filter: Option<&str>) -> Result<FitReport> {
    let all = groups(records);
    if let Some(f) = filter {
        if !all.iter().any(|(n, _)| n == f) {
            return Err(Error::InsufficientData(format!("spec '{f}' has no records in the store")));
        }
    }
    let mut fits = Vec::new();
    let mut notes = vec!["E averages over the surviving (filtered) raw points, which need not form a full grid".to_string()];
    for (name, lambda) in &all {
        let selected = filter.map_or(true, |f| f == name);
        match fit_spec(name, &observations(records, name, *lambda), opts) {
            Ok(fit) => fits.push((fit, *lambda, selected)),
            Err(e) if !selected => notes.push(format!("{name} (lambda {lambda}) excluded from L_inf_best: {e}")),
            Err(e) => return Err(e),
        }
    }
    let l_inf_best = fits.iter().map(|(f, ..)| f.loss_law.asymptote).fold(f64::INFINITY, f64::min);
    let specs = fits.iter().filter(|(.., s)| *s).map(|(f, l, _)| spec_report(f, *l, l_inf_best)).collect();
    Ok(FitReport { version: REPORT_VERSION, options: *opts, l_inf_best, specs, notes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub spec: String,
    pub lambda: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub kappa: f64,
    #[serde(rename = "R_inf")]
    pub r_inf: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "L_inf")]
    pub l_inf: f64,
    pub degenerate_beta_resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub version: u32,
    pub options: FitOptions,
    pub rows: Vec<AblationRow>,
    /// Ablation names with no records in the store.
    pub missing: Vec<String>,
}

/// Three-metric table per spec and weight decay; the best asymptote is
/// taken within each weight decay.
pub fn ablation(records: &[RunRecord], opts: &FitOptions, expected: &[String]) -> Result<AblationReport> {
    let all = groups(records);
    let mut fitted: Vec<(SpecFit, f64)> = Vec::new();
    for (name, lambda) in &all {
        let fit = fit_spec(name, &observations(records, name, *lambda), opts)
            .map_err(|e| Error::InsufficientData(format!("{name} (lambda {lambda}): {e}")))?;
        fitted.push((fit, *lambda));
    }
    let mut rows = Vec::new();
    for (fit, lambda) in &fitted {
        let best = fitted
            .iter()
            .filter(|(_, l)| l == lambda)
            .map(|(f, _)| f.loss_law.asymptote)
            .fold(f64::INFINITY, f64::min);
        let m = fit.metrics(best);
        rows.push(AblationRow {
            spec: fit.name.clone(),
            lambda: *lambda,
            e: m.e,
            kappa: m.kappa,
            r_inf: m.r_inf,
            alpha: m.alpha,
            beta: m.beta,
            gamma: m.gamma,
            l_inf: m.l_inf,
            degenerate_beta_resolved: m.degenerate_beta_resolved,
        });
    }
    let missing = expected.iter().filter(|n| !all.iter().any(|(g, _)| g == *n)).cloned().collect();
    Ok(AblationReport { version: REPORT_VERSION, options: *opts, rows, missing })
}

impl AblationReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:<20} {:>9} {:>11} {:>8} {:>9}\n", "spec", "lambda", "E", "kappa", "R_inf");
        for r in &self.rows {
            s.push_str(&format!("{:<20} {:>9.3e} {:>11.4e} {:>8.3} {:>9.4}\n", r.spec, r.lambda, r.e, r.kappa, r.r_inf));
        }
        s
    }
}

impl FitReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<20} {:>9} {:>7} {:>7} {:>7} {:>8} {:>11} {:>8}\n",
            "spec", "lambda", "alpha", "beta", "gamma", "kappa", "E", "R_inf"
        );
        for r in &self.specs {
            s.push_str(&format!(
                "{:<20} {:>9.3e} {:>7.3} {:>7.3} {:>7.3} {:>8.3} {:>11.4e} {:>8.4}\n",
                r.name, r.lambda, r.alpha, r.beta, r.gamma, r.kappa, r.e, r.r_inf
            ));
        }
        s
    }
}
