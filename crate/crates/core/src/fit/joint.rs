//! Joint loss surface
//! `L(nu; n) = L_inf + A n^-alpha + C/2 n^gamma (nu - nu_inf - B n^-beta)^2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::lm::{multistart, Bounds, LmOptions, Model};
use super::powerlaw::{FitSettings, EXPONENT_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub l_inf: f64,
    pub a: f64,
    pub alpha: f64,
    pub c: f64,
    pub gamma: f64,
    pub b: f64,
    pub beta: f64,
    pub nu_inf: f64,
}

impl JointParams {
    fn to_vec(self) -> Vec<f64> {
        vec![self.l_inf, self.a, self.alpha, self.c, self.gamma, self.b, self.beta, self.nu_inf]
    }

    fn from_slice(p: &[f64]) -> Self {
        JointParams { l_inf: p[0], a: p[1], alpha: p[2], c: p[3], gamma: p[4], b: p[5], beta: p[6], nu_inf: p[7] }
    }

    pub fn predict(&self, nu: f64, n: f64) -> f64 {
        let d = nu - self.nu_inf - self.b * n.powf(-self.beta);
        self.l_inf + self.a * n.powf(-self.alpha) + 0.5 * self.c * n.powf(self.gamma) * d * d
    }

    pub fn nu_star(&self, n: f64) -> f64 {
        self.nu_inf + self.b * n.powf(-self.beta)
    }

    pub fn l_star(&self, n: f64) -> f64 {
        self.l_inf + self.a * n.powf(-self.alpha)
    }

    pub fn curvature(&self, n: f64) -> f64 {
        self.c * n.powf(self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFit {
    pub params: JointParams,
    pub objective: f64,
    pub restart_index: usize,
}

struct Surface {
    /// `(nu, ln n, loss)`.
    pts: Vec<(f64, f64, f64)>,
}

impl Model for Surface {
    fn n_params(&self) -> usize {
        8
    }
    fn n_residuals(&self) -> usize {
        self.pts.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, &(nu, ln_n, l)) in self.pts.iter().enumerate() {
            let d = nu - p[7] - p[5] * (-p[6] * ln_n).exp();
            out[i] = p[0] + p[1] * (-p[2] * ln_n).exp() + 0.5 * p[3] * (p[4] * ln_n).exp() * d * d - l;
        }
    }
    fn jacobian(&self, p: &[f64], out: &mut [f64]) {
        for (i, &(nu, ln_n, _)) in self.pts.iter().enumerate() {
            let ea = (-p[2] * ln_n).exp();
            let eg = (p[4] * ln_n).exp();
            let eb = (-p[6] * ln_n).exp();
            let d = nu - p[7] - p[5] * eb;
            let q = 0.5 * p[3] * eg;
            let row = &mut out[8 * i..8 * i + 8];
            row[0] = 1.0;
            row[1] = ea;
            row[2] = -p[1] * ln_n * ea;
            row[3] = 0.5 * eg * d * d;
            row[4] = q * ln_n * d * d;
            row[5] = -2.0 * q * d * eb;
            row[6] = 2.0 * q * d * p[5] * ln_n * eb;
            row[7] = -2.0 * q * d;
        }
    }
}

fn bounds() -> Bounds {
    Bounds {
        lo: vec![0.0, 0.0, 0.0, 0.0, -EXPONENT_CAP, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY],
        hi: vec![f64::INFINITY, f64::INFINITY, EXPONENT_CAP, f64::INFINITY, EXPONENT_CAP, f64::INFINITY, EXPONENT_CAP, f64::INFINITY],
    }
}

/// Fits the surface to `(width, nu, loss)` points. Restart 0 starts at
/// `init`; the others perturb it log-uniformly.
pub fn joint_fit(points: &[(usize, f64, f64)], init: &JointParams, settings: &FitSettings) -> Result<JointFit> {
    if points.len() < 8 {
        return Err(Error::InsufficientData(format!("joint fit needs at least 8 points, got {}", points.len())));
    }
    let model = Surface { pts: points.iter().map(|&(n, nu, l)| (nu, (n as f64).ln(), l)).collect() };
    let b = bounds();
    let mut start = init.to_vec();
    b.clamp(&mut start);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x701);
    let mut starts = vec![start.clone()];
    let lu = |rng: &mut ChaCha8Rng, w: f64| 10f64.powf(w * (2.0 * rng.random::<f64>() - 1.0));
    for _ in 1..settings.restarts.max(1) {
        let mut s = start.clone();
        s[0] *= lu(&mut rng, 0.1);
        s[1] = s[1].max(1e-8) * lu(&mut rng, 0.5);
        s[2] = (s[2].max(0.02) * lu(&mut rng, 0.3)).min(EXPONENT_CAP);
        s[3] = s[3].max(1e-8) * lu(&mut rng, 0.5);
        s[4] += 0.5 * (2.0 * rng.random::<f64>() - 1.0);
        s[5] *= lu(&mut rng, 0.5);
        s[6] = (s[6].max(0.02) * lu(&mut rng, 0.3)).min(EXPONENT_CAP);
        s[7] += 2.0 * rng.random::<f64>() - 1.0;
        b.clamp(&mut s);
        starts.push(s);
    }
    let opt = LmOptions { delta: settings.delta, max_iter: 200, ..Default::default() };
    let (idx, best) =
        multistart(&model, &starts, &b, &opt).ok_or_else(|| Error::Fit("joint fit: no finite restart".into()))?;
    Ok(JointFit { params: JointParams::from_slice(&best.params), objective: best.objective, restart_index: idx })
}
