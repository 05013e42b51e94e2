//! Observations drawn from the joint surface, for calibration and demos.

use super::curves::Observation;
use super::joint::JointParams;
use crate::rng::{derive_seed, KeyedRng};

/// One observation per `(width, nu)` pair with additive Gaussian noise of
/// standard deviation `noise`.
pub fn surface_observations(
    params: &JointParams,
    widths: &[usize],
    nu_grid: &[f64],
    noise: f64,
    seed: u64,
) -> Vec<Observation> {
    let mut rng = KeyedRng::new(derive_seed(&[seed, 0x5e]), 0);
    let mut out = Vec::with_capacity(widths.len() * nu_grid.len());
    for &n in widths {
        for &nu in nu_grid {
            let loss = params.predict(nu, n as f64) + noise * rng.normal();
            out.push(Observation { width: n, nu, loss });
        }
    }
    out
}

/// `count` points spaced by `step`, centred on `center`.
pub fn centered_grid(center: f64, step: f64, count: usize) -> Vec<f64> {
    let half = (count as f64 - 1.0) / 2.0;
    (0..count).map(|i| center + (i as f64 - half) * step).collect()
}
