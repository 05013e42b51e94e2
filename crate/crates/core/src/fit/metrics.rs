use serde::{Deserialize, Serialize};

use super::curves::{fit_centered_quadratic, WidthCurve};
use super::joint::JointParams;

/// Mean squared error of the joint surface on raw `(width, nu, loss)` points.
pub fn compute_e(joint: &JointParams, raw: &[(usize, f64, f64)]) -> f64 {
    if raw.is_empty() {
        return f64::NAN;
    }
    raw.iter()
        .map(|&(n, nu, l)| {
            let r = l - joint.predict(nu, n as f64);
            r * r
        })
        .sum::<f64>()
        / raw.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMetrics {
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
    /// The raw difference to the best asymptote was negative.
    pub r_inf_clamped: bool,
}

/// `kappa = alpha - 2 beta + gamma`.
pub fn kappa(alpha: f64, beta: f64, gamma: f64) -> f64 {
    alpha - 2.0 * beta + gamma
}

/// Assembles the three transfer metrics from individually fitted exponents.
pub fn compute_metrics(
    alpha: f64,
    beta: f64,
    gamma: f64,
    l_inf: f64,
    l_inf_best: f64,
    e: f64,
    degenerate_beta_resolved: bool,
) -> TransferMetrics {
    let raw = l_inf - l_inf_best;
    TransferMetrics {
        e,
        kappa: kappa(alpha, beta, gamma),
        r_inf: raw.max(0.0),
        alpha,
        beta,
        gamma,
        l_inf,
        degenerate_beta_resolved,
        r_inf_clamped: raw < 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCurve {
    pub width: usize,
    /// `(nu_tilde, L_tilde)`.
    pub points: Vec<(f64, f64)>,
    /// Curvature of `L_tilde` in `nu_tilde` around 1.
    pub curvature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub curves: Vec<NormalizedCurve>,
    /// Widths whose denominators vanished.
    pub excluded: Vec<usize>,
}

/// Normalized coordinates
/// `L~ = (L - L_inf) / (A n^-alpha)`, `nu~ = (nu - nu_inf) / (B n^-beta)`.
/// Uses the interpolated curve when present, the raw points otherwise.
pub fn normalize_coordinates(curves: &[WidthCurve], loss: (f64, f64, f64), nu: (f64, f64, f64)) -> Normalized {
    let (l_inf, a, alpha) = loss;
    let (nu_inf, b, beta) = nu;
    let mut out = Vec::new();
    let mut excluded = Vec::new();
    for c in curves {
        let n = c.width as f64;
        let dl = a * n.powf(-alpha);
        let dn = b * n.powf(-beta);
        if !(dl.abs() > 1e-300 && dn.abs() > 1e-300 && dl.is_finite() && dn.is_finite()) {
            excluded.push(c.width);
            continue;
        }
        let src = c.interpolated.as_ref().unwrap_or(&c.points);
        let points: Vec<(f64, f64)> = src.iter().map(|&(v, l)| ((v - nu_inf) / dn, (l - l_inf) / dl)).collect();
        let (_, h, _) = fit_centered_quadratic(&points, 1.0);
        out.push(NormalizedCurve { width: c.width, points, curvature: h });
    }
    Normalized { curves: out, excluded }
}

/// Ordinary least-squares slope of `ln y` on `ln x` and its standard error.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    let se = if lx.len() > 2 { (sse / (m - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, icpt, se)
}

/// Slope of the normalized curvature against width; equals kappa for data
/// following the joint surface.
pub fn normalized_curvature_slope(norm: &Normalized) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        norm.curves.iter().filter(|c| c.curvature > 0.0).map(|c| (c.width as f64, c.curvature)).collect();
    if pts.len() < 2 {
        return None;
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    Some(log_log_slope(&x, &y).0)
}
