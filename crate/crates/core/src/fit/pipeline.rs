use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::curves::{
    extract_optimum, filter_runs, fit_curvature, interpolate, DroppedWidth, Observation, WidthCurve, DEFAULT_F,
    DEFAULT_GRID, DEFAULT_S,
};
use super::joint::{joint_fit, JointFit, JointParams};
use super::metrics::{compute_e, compute_metrics, TransferMetrics};
use super::powerlaw::{fit_h_law, fit_loss_law, fit_nu_law, FitSettings, HLawFit, NuLawFit, PowerLawFit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub f: f64,
    pub s: f64,
    pub grid: usize,
    pub settings: FitSettings,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { f: DEFAULT_F, s: DEFAULT_S, grid: DEFAULT_GRID, settings: FitSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    pub width: usize,
    pub nu_star: f64,
    pub l_min: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub curvature_residual: f64,
    pub n_points: usize,
}

/// Every intermediate of the per-spec pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecFit {
    pub name: String,
    pub options: FitOptions,
    pub widths: Vec<WidthSummary>,
    pub dropped: Vec<DroppedWidth>,
    pub loss_law: PowerLawFit,
    pub nu_law: NuLawFit,
    pub h_law: HLawFit,
    pub joint: JointFit,
    #[serde(rename = "E")]
    pub e: f64,
    pub curves: Vec<WidthCurve>,
}

/// Filter, interpolate, extract optima, fit the three width laws, fit the
/// joint surface and evaluate its error on the raw filtered points.
pub fn fit_spec(name: &str, obs: &[Observation], opts: &FitOptions) -> Result<SpecFit> {
    let filtered = filter_runs(obs, opts.f)?;
    if filtered.curves.len() < 3 {
        let kept: Vec<String> = filtered.curves.iter().map(|c| c.width.to_string()).collect();
        return Err(Error::InsufficientData(format!(
            "spec '{name}' retains widths [{}]; at least 3 are needed",
            kept.join(", ")
        )));
    }
    let mut curves = Vec::new();
    let mut widths = Vec::new();
    for c in &filtered.curves {
        let ic = interpolate(c, opts.s, opts.grid)?;
        let (nu_star, l_min) = extract_optimum(&ic)?;
        let cf = fit_curvature(&ic, nu_star)?;
        widths.push(WidthSummary {
            width: c.width,
            nu_star,
            l_min,
            h: cf.h,
            curvature_residual: cf.residual,
            n_points: c.points.len(),
        });
        curves.push(ic);
    }
    let lpts: Vec<(f64, f64)> = widths.iter().map(|w| (w.width as f64, w.l_min)).collect();
    let npts: Vec<(f64, f64)> = widths.iter().map(|w| (w.width as f64, w.nu_star)).collect();
    let hpts: Vec<(f64, f64)> = widths.iter().map(|w| (w.width as f64, w.h)).collect();
    let loss_law = fit_loss_law(&lpts, &opts.settings)?;
    let nu_law = fit_nu_law(&npts, &opts.settings)?;
    let h_law = fit_h_law(&hpts, &opts.settings)?;
    let init = JointParams {
        l_inf: loss_law.asymptote,
        a: loss_law.coef,
        alpha: loss_law.exponent,
        c: h_law.fit.coef,
        gamma: h_law.fit.exponent,
        b: nu_law.fit.coef,
        beta: nu_law.fit.exponent,
        nu_inf: nu_law.fit.asymptote,
    };
    let dense: Vec<(usize, f64, f64)> = curves
        .iter()
        .flat_map(|c| c.interpolated.as_ref().unwrap().iter().map(move |&(v, l)| (c.width, v, l)))
        .collect();
    let joint = joint_fit(&dense, &init, &opts.settings)?;
    let raw: Vec<(usize, f64, f64)> =
        curves.iter().flat_map(|c| c.points.iter().map(move |&(v, l)| (c.width, v, l))).collect();
    let e = compute_e(&joint.params, &raw);
    Ok(SpecFit {
        name: name.to_string(),
        options: *opts,
        widths,
        dropped: filtered.dropped,
        loss_law,
        nu_law,
        h_law,
        joint,
        e,
        curves,
    })
}

impl SpecFit {
    /// Metrics against the best asymptote of the compared set.
    pub fn metrics(&self, l_inf_best: f64) -> TransferMetrics {
        compute_metrics(
            self.loss_law.exponent,
            self.nu_law.fit.exponent,
            self.h_law.fit.exponent,
            self.loss_law.asymptote,
            l_inf_best,
            self.e,
            self.nu_law.resolution.resolved,
        )
    }
}

/// Metrics for every fit, with the best asymptote taken over the set.
pub fn metrics_for(fits: &[SpecFit]) -> Vec<TransferMetrics> {
    let best = fits.iter().map(|f| f.loss_law.asymptote).fold(f64::INFINITY, f64::min);
    fits.iter().map(|f| f.metrics(best)).collect()
}
