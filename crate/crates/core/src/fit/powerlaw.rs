//! Width power laws: `L*(n) = L_inf + A n^-alpha`, `nu*(n) = nu_inf + B n^-beta`
//! and `H(n) = C n^gamma`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::lm::{huber, huber_linear, minimize, multistart, Bounds, LmOptions, Model};

/// Largest exponent magnitude ever reported.
pub const EXPONENT_CAP: f64 = 2.0;
pub const HUBER_DELTA: f64 = 1e-3;
pub const RESTARTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub asymptote: f64,
    pub coef: f64,
    pub exponent: f64,
    pub huber_residual: f64,
    /// Exponent sits at the cap.
    pub capped: bool,
    /// The width-dependent term is negligible, so the exponent is not
    /// identified by the data.
    #[serde(default)]
    pub degenerate: bool,
}

impl PowerLawFit {
    pub fn eval(&self, n: f64) -> f64 {
        self.asymptote + self.coef * n.powf(-self.exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub restarts: usize,
    pub seed: u64,
    pub delta: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings { restarts: RESTARTS, seed: 0, delta: HUBER_DELTA }
    }
}

fn check_points(points: &[(f64, f64)], what: &str) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("{what} needs at least 3 widths, got {}", points.len())));
    }
    if points.iter().any(|(n, v)| !(n.is_finite() && *n > 0.0 && v.is_finite())) {
        return Err(Error::Fit(format!("{what}: non-finite or non-positive input")));
    }
    Ok(())
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

struct LossLaw {
    ln_n: Vec<f64>,
    ln_l: Vec<f64>,
}

impl Model for LossLaw {
    fn n_params(&self) -> usize {
        3
    }
    fn n_residuals(&self) -> usize {
        self.ln_n.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for i in 0..self.ln_n.len() {
            let pred = p[0] + p[1] * (-p[2] * self.ln_n[i]).exp();
            out[i] = if pred > 0.0 { pred.ln() - self.ln_l[i] } else { f64::INFINITY };
        }
    }
    fn jacobian(&self, p: &[f64], out: &mut [f64]) {
        for i in 0..self.ln_n.len() {
            let e = (-p[2] * self.ln_n[i]).exp();
            let pred = (p[0] + p[1] * e).max(1e-300);
            out[3 * i] = 1.0 / pred;
            out[3 * i + 1] = e / pred;
            out[3 * i + 2] = -p[1] * self.ln_n[i] * e / pred;
        }
    }
}

/// Log-space Huber fit with `L_inf, A >= 0` and `0 <= alpha <= 2`.
pub fn fit_loss_law(points: &[(f64, f64)], settings: &FitSettings) -> Result<PowerLawFit> {
    check_points(points, "loss law")?;
    if points.iter().any(|(_, l)| *l <= 0.0) {
        return Err(Error::Fit("loss law needs positive losses".into()));
    }
    let model = LossLaw {
        ln_n: points.iter().map(|(n, _)| n.ln()).collect(),
        ln_l: points.iter().map(|(_, l)| l.ln()).collect(),
    };
    let lmin = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let lmax = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let nmin = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let spread = (lmax - lmin).max(1e-6 * lmin.abs().max(1e-12));
    let bounds = Bounds { lo: vec![0.0, 0.0, 0.0], hi: vec![lmax * 10.0, f64::INFINITY, EXPONENT_CAP] };
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x1055);
    let starts: Vec<Vec<f64>> = (0..settings.restarts.max(1))
        .map(|_| {
            let alpha = log_uniform(&mut rng, 0.05, EXPONENT_CAP);
            let linf = rng.random::<f64>() * lmin;
            let a = log_uniform(&mut rng, 0.1, 10.0) * spread.max(lmin - linf) * nmin.powf(alpha);
            vec![linf, a, alpha]
        })
        .collect();
    let opt = LmOptions { delta: settings.delta, ..Default::default() };
    let (_, best) = multistart(&model, &starts, &bounds, &opt)
        .ok_or_else(|| Error::Fit("loss law: no restart produced a finite objective".into()))?;
    let (linf, a, alpha) = (best.params[0], best.params[1], best.params[2]);
    let degenerate = a * nmin.powf(-alpha) <= 1e-9 * lmin;
    Ok(PowerLawFit {
        asymptote: linf,
        coef: a,
        exponent: alpha,
        huber_residual: best.objective,
        capped: alpha >= EXPONENT_CAP - 1e-12,
        degenerate,
    })
}

/// For fixed beta, Huber regression of `nu` on `[1, n^-beta]`.
fn nu_profile(ln_n: &[f64], nu: &[f64], beta: f64, delta: f64) -> (f64, f64, f64) {
    let x = DMatrix::from_fn(ln_n.len(), 2, |i, j| if j == 0 { 1.0 } else { (-beta * ln_n[i]).exp() });
    let y = DVector::from_column_slice(nu);
    let (b, obj) = huber_linear(&x, &y, delta);
    (b[0], b[1], obj)
}

/// Minimizes the profiled objective over `beta` in `[beta_min, cap]`.
/// Exact ties prefer the smaller beta.
fn fit_nu_bounded(ln_n: &[f64], nu: &[f64], beta_min: f64, settings: &FitSettings) -> (f64, f64, f64, f64) {
    let delta = settings.delta;
    let prof = |b: f64| nu_profile(ln_n, nu, b, delta).2;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x2b7a);
    let mut cands: Vec<f64> = vec![beta_min, EXPONENT_CAP];
    for _ in 0..settings.restarts.max(1) {
        let b = log_uniform(&mut rng, 0.05, EXPONENT_CAP);
        cands.push(b.max(beta_min));
    }
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    let vals: Vec<f64> = cands.iter().map(|&b| prof(b)).collect();
    let mut best_b = cands[0];
    let mut best_v = vals[0];
    for (i, &b) in cands.iter().enumerate() {
        if vals[i] < best_v {
            best_v = vals[i];
            best_b = b;
        }
    }
    // local refinement on the bracket around each of the best candidates
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap().then(a.cmp(&b)));
    for &i in order.iter().take(5) {
        let lo = if i == 0 { cands[0] } else { cands[i - 1] };
        let hi = if i + 1 == cands.len() { cands[i] } else { cands[i + 1] };
        let (b, v) = golden(&prof, lo, hi);
        if v < best_v || (v == best_v && b < best_b) {
            best_v = v;
            best_b = b;
        }
    }
    let (a, coef, obj) = nu_profile(ln_n, nu, best_b, delta);
    (a, coef, best_b, obj)
}

fn golden(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..80 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let (fa, fb) = (f(a), f(b));
    let mut best = (c, fc);
    for cand in [(d, fd), (a, fa), (b, fb)] {
        if cand.1 < best.1 {
            best = cand;
        }
    }
    best
}

fn nu_fit_from(ln_n: &[f64], nu: &[f64], beta_min: f64, settings: &FitSettings) -> PowerLawFit {
    let (asym, coef, beta, obj) = fit_nu_bounded(ln_n, nu, beta_min, settings);
    let nmin = ln_n.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = 1.0 + nu.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let correction = coef.abs() * (-beta * nmin).exp();
    let degenerate = correction <= 1e-9 * scale && beta > 0.0;
    // a vanishing correction means nu* has already converged: report the
    // rapid-convergence end of the range
    let (beta, coef) = if degenerate { (EXPONENT_CAP, 0.0) } else { (beta, coef) };
    PowerLawFit {
        asymptote: if degenerate { nu.iter().sum::<f64>() / nu.len() as f64 } else { asym },
        coef,
        exponent: beta,
        huber_residual: obj,
        capped: beta >= EXPONENT_CAP - 1e-12,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaResolution {
    pub beta: f64,
    pub resolved: bool,
    /// `(beta_min, fitted beta)` trend; empty when resolution was skipped.
    pub trend: Vec<(f64, f64)>,
    pub step_score: f64,
    pub linear_score: f64,
    /// Location of the jump when the step model wins.
    pub beta_min_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuLawFit {
    pub fit: PowerLawFit,
    /// Unconstrained fit before degeneracy resolution.
    pub unresolved: PowerLawFit,
    pub resolution: BetaResolution,
}

/// Linear-space fit of `nu*(n)` with `beta in [0, 2]` and free `B`, followed
/// by degeneracy resolution.
pub fn fit_nu_law(points: &[(f64, f64)], settings: &FitSettings) -> Result<NuLawFit> {
    check_points(points, "nu law")?;
    let ln_n: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let nu: Vec<f64> = points.iter().map(|(_, v)| *v).collect();
    let base = nu_fit_from(&ln_n, &nu, 0.0, settings);
    let (fit, resolution) = resolve_beta_degeneracy_with(&ln_n, &nu, &base, settings);
    Ok(NuLawFit { fit, unresolved: base, resolution })
}

/// Grid of lower bounds swept during resolution.
pub fn beta_min_grid() -> Vec<f64> {
    (0..=40).map(|i| i as f64 * 0.05).collect()
}

/// Step-vs-linear test on the `beta(beta_min)` trend of a completed fit.
pub fn resolve_beta_degeneracy(points: &[(f64, f64)], base: &PowerLawFit, settings: &FitSettings) -> BetaResolution {
    let ln_n: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let nu: Vec<f64> = points.iter().map(|(_, v)| *v).collect();
    resolve_beta_degeneracy_with(&ln_n, &nu, base, settings).1
}

fn resolve_beta_degeneracy_with(
    ln_n: &[f64],
    nu: &[f64],
    base: &PowerLawFit,
    settings: &FitSettings,
) -> (PowerLawFit, BetaResolution) {
    // a degenerate fit has already been sent to the capped branch
    if base.exponent >= 1.0 {
        return (
            base.clone(),
            BetaResolution {
                beta: base.exponent,
                resolved: base.degenerate,
                trend: Vec::new(),
                step_score: f64::NAN,
                linear_score: f64::NAN,
                beta_min_star: None,
            },
        );
    }
    let grid = beta_min_grid();
    let fits: Vec<PowerLawFit> = grid
        .iter()
        .map(|&bm| if bm == 0.0 { base.clone() } else { nu_fit_from(ln_n, nu, bm, settings) })
        .collect();
    let trend: Vec<(f64, f64)> = grid.iter().zip(&fits).map(|(&g, f)| (g, f.exponent)).collect();
    let delta = settings.delta;
    let xs: Vec<f64> = trend.iter().map(|t| t.0).collect();
    let ys: Vec<f64> = trend.iter().map(|t| t.1).collect();

    // linear model
    let x = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let (_, linear_score) = huber_linear(&x, &DVector::from_column_slice(&ys), delta);

    // step model: two Huber locations split between consecutive grid points
    let loc = |v: &[f64]| -> f64 {
        let x = DMatrix::from_element(v.len(), 1, 1.0);
        huber_linear(&x, &DVector::from_column_slice(v), delta).1
    };
    let mut step_score = f64::INFINITY;
    let mut split = 0;
    for k in 1..ys.len() {
        let s = loc(&ys[..k]) + loc(&ys[k..]);
        if s < step_score {
            step_score = s;
            split = k;
        }
    }
    let step_wins = step_score < linear_score && ys[split] > ys[split - 1];
    if step_wins {
        let chosen = fits[split].clone();
        let beta = chosen.exponent;
        (
            chosen,
            BetaResolution {
                beta,
                resolved: true,
                trend,
                step_score,
                linear_score,
                beta_min_star: Some(xs[split - 1]),
            },
        )
    } else {
        (
            base.clone(),
            BetaResolution {
                beta: base.exponent,
                resolved: false,
                trend,
                step_score,
                linear_score,
                beta_min_star: None,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HLawFit {
    pub fit: PowerLawFit,
    /// Widths dropped because their curvature was not positive.
    pub excluded_widths: Vec<f64>,
}

/// Log-log Huber regression `ln H = ln C + gamma ln n`, `|gamma| <= 2`.
pub fn fit_h_law(points: &[(f64, f64)], settings: &FitSettings) -> Result<HLawFit> {
    let excluded: Vec<f64> = points.iter().filter(|(_, h)| !(*h > 0.0)).map(|(n, _)| *n).collect();
    let kept: Vec<(f64, f64)> = points.iter().filter(|(_, h)| *h > 0.0).cloned().collect();
    check_points(&kept, "curvature law")?;
    let x = DMatrix::from_fn(kept.len(), 2, |i, j| if j == 0 { 1.0 } else { kept[i].0.ln() });
    let y = DVector::from_iterator(kept.len(), kept.iter().map(|(_, h)| h.ln()));
    let (b, obj) = huber_linear(&x, &y, settings.delta);
    let mut gamma = b[1];
    let mut lnc = b[0];
    let mut resid = obj;
    let capped = gamma.abs() > EXPONENT_CAP;
    if capped {
        gamma = gamma.clamp(-EXPONENT_CAP, EXPONENT_CAP);
        let shifted: Vec<f64> = kept.iter().map(|(n, h)| h.ln() - gamma * n.ln()).collect();
        let ones = DMatrix::from_element(kept.len(), 1, 1.0);
        let (c, o) = huber_linear(&ones, &DVector::from_column_slice(&shifted), settings.delta);
        lnc = c[0];
        resid = o;
    }
    Ok(HLawFit {
        fit: PowerLawFit {
            asymptote: 0.0,
            coef: lnc.exp(),
            exponent: gamma,
            huber_residual: resid,
            capped,
            degenerate: false,
        },
        excluded_widths: excluded,
    })
}

/// `C n^gamma`.
pub fn eval_h(fit: &PowerLawFit, n: f64) -> f64 {
    fit.coef * n.powf(fit.exponent)
}

/// Local refinement of a loss-law fit from a given start (used by tests and
/// the joint-fit initializer).
pub fn refine_loss_law(points: &[(f64, f64)], start: [f64; 3], delta: f64) -> PowerLawFit {
    let model = LossLaw {
        ln_n: points.iter().map(|(n, _)| n.ln()).collect(),
        ln_l: points.iter().map(|(_, l)| l.ln()).collect(),
    };
    let bounds = Bounds { lo: vec![0.0, 0.0, 0.0], hi: vec![f64::INFINITY, f64::INFINITY, EXPONENT_CAP] };
    let f = minimize(&model, &start, &bounds, &LmOptions { delta, ..Default::default() });
    PowerLawFit {
        asymptote: f.params[0],
        coef: f.params[1],
        exponent: f.params[2],
        huber_residual: f.objective,
        capped: f.params[2] >= EXPONENT_CAP - 1e-12,
        degenerate: false,
    }
}

/// Huber objective of arbitrary residuals (re-exported for reports).
pub fn huber_objective(res: &[f64], delta: f64) -> f64 {
    res.iter().map(|&r| huber(r, delta)).sum()
}
