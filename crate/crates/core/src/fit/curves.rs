use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::spline::{uniform_grid, SmoothingSpline};

pub const DEFAULT_F: f64 = 1.35;
pub const DEFAULT_S: f64 = 0.1;
pub const DEFAULT_GRID: usize = 400;
/// Widths with fewer surviving points are dropped.
pub const MIN_POINTS: usize = 4;

/// One loss observation at `(width, nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub width: usize,
    pub nu: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthCurve {
    pub width: usize,
    /// `(nu, loss)`, strictly increasing in `nu`.
    pub points: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpolated: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedWidth {
    pub width: usize,
    pub surviving: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub curves: Vec<WidthCurve>,
    pub dropped: Vec<DroppedWidth>,
}

/// Keeps finite losses within `f` times the per-width minimum. Repeated
/// observations at the same `(width, nu)` are averaged first.
pub fn filter_runs(obs: &[Observation], f: f64) -> Result<FilterOutcome> {
    let mut by_width: BTreeMap<usize, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for o in obs {
        if !o.loss.is_finite() || !o.nu.is_finite() {
            by_width.entry(o.width).or_default();
            continue;
        }
        let e = by_width.entry(o.width).or_default().entry(ordered_bits(o.nu)).or_insert((o.nu, 0.0, 0));
        e.1 += o.loss;
        e.2 += 1;
    }
    let mut curves = Vec::new();
    let mut dropped = Vec::new();
    for (width, pts) in by_width {
        let mut points: Vec<(f64, f64)> = pts.values().map(|(nu, s, c)| (*nu, s / *c as f64)).collect();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        if min.is_finite() {
            let thr = f * min;
            points.retain(|p| p.1 <= thr);
        }
        if points.len() < MIN_POINTS {
            dropped.push(DroppedWidth { width, surviving: points.len() });
        } else {
            curves.push(WidthCurve { width, points, interpolated: None });
        }
    }
    if curves.is_empty() {
        let detail: Vec<String> = dropped.iter().map(|d| format!("n={} kept {}", d.width, d.surviving)).collect();
        return Err(Error::InsufficientData(format!("no width retains {MIN_POINTS} points ({})", detail.join(", "))));
    }
    Ok(FilterOutcome { curves, dropped })
}

/// Sort key for floats that keeps numeric order for finite values.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn population_variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Smoothing spline with budget `S = s * N * Var(L)`, evaluated on a uniform
/// grid over the observed `nu` range.
pub fn interpolate(curve: &WidthCurve, s: f64, grid: usize) -> Result<WidthCurve> {
    let x: Vec<f64> = curve.points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    if x.len() < MIN_POINTS {
        return Err(Error::Fit(format!("width {}: need {MIN_POINTS} points, got {}", curve.width, x.len())));
    }
    let budget = s * x.len() as f64 * population_variance(&y);
    let spline = SmoothingSpline::fit(&x, &y, budget).map_err(|e| Error::Fit(format!("width {}: {e}", curve.width)))?;
    let g = uniform_grid(x[0], x[x.len() - 1], grid.max(2));
    let dense = g.iter().map(|&v| (v, spline.eval(v))).collect();
    Ok(WidthCurve { width: curve.width, points: curve.points.clone(), interpolated: Some(dense) })
}

/// `(nu_star, L_min_raw)`: grid argmin (smallest nu on ties) and the raw
/// minimum of the filtered points.
pub fn extract_optimum(curve: &WidthCurve) -> Result<(f64, f64)> {
    let dense = curve
        .interpolated
        .as_ref()
        .ok_or_else(|| Error::Fit(format!("width {} has no interpolated curve", curve.width)))?;
    let mut best = dense[0];
    for &p in dense.iter().skip(1) {
        if p.1 < best.1 {
            best = p;
        }
    }
    let raw = curve.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok((best.0, raw))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureFit {
    pub width: usize,
    pub nu_star: f64,
    /// Fitted offset of the centered quadratic.
    pub l_min: f64,
    pub h: f64,
    /// Root mean squared residual over the fitted points.
    pub residual: f64,
}

/// Least-squares `L = L_min + H/2 (nu - nu_star)^2` with the centre fixed
/// and `H >= 0`, over arbitrary points.
pub fn fit_centered_quadratic(points: &[(f64, f64)], center: f64) -> (f64, f64, f64) {
    let m = points.len() as f64;
    if points.iter().all(|p| p.1 == points[0].1) {
        return (points[0].1, 0.0, 0.0);
    }
    let (mut s1, mut s2, mut sy, mut sqy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let q = 0.5 * (x - center) * (x - center);
        s1 += q;
        s2 += q * q;
        sy += y;
        sqy += q * y;
    }
    let det = m * s2 - s1 * s1;
    let (mut l0, mut h) = if det.abs() > 1e-300 {
        ((s2 * sy - s1 * sqy) / det, (m * sqy - s1 * sy) / det)
    } else {
        (sy / m, 0.0)
    };
    if h < 0.0 {
        h = 0.0;
        l0 = sy / m;
    }
    let rss: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = l0 + 0.5 * h * (x - center) * (x - center) - y;
            r * r
        })
        .sum();
    (l0, h, (rss / m).sqrt())
}

/// Curvature of an interpolated curve around `nu_star`.
pub fn fit_curvature(curve: &WidthCurve, nu_star: f64) -> Result<CurvatureFit> {
    let dense = curve
        .interpolated
        .as_ref()
        .ok_or_else(|| Error::Fit(format!("width {} has no interpolated curve", curve.width)))?;
    let (l_min, h, residual) = fit_centered_quadratic(dense, nu_star);
    Ok(CurvatureFit { width: curve.width, nu_star, l_min, h, residual })
}
