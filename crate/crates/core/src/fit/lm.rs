//! Bound-constrained Levenberg-Marquardt on a Huber objective, solved by
//! iteratively reweighted least squares, plus a deterministic multi-start
//! driver.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Huber penalty with threshold `delta`.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_sum(res: &[f64], delta: f64) -> f64 {
    res.iter().map(|&r| huber(r, delta)).sum()
}

/// Residual model `r(p)` with analytic Jacobian.
pub trait Model: Sync {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, p: &[f64], out: &mut [f64]);
    /// Row-major `n_residuals x n_params`.
    fn jacobian(&self, p: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn clamp(&self, p: &mut [f64]) {
        for i in 0..p.len() {
            p[i] = p[i].clamp(self.lo[i], self.hi[i]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub params: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub delta: f64,
    pub max_iter: usize,
    pub ftol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { delta: 1e-3, max_iter: 300, ftol: 1e-15 }
    }
}

fn objective<M: Model + ?Sized>(m: &M, p: &[f64], buf: &mut [f64], delta: f64) -> f64 {
    m.residuals(p, buf);
    let o = huber_sum(buf, delta);
    if o.is_finite() {
        o
    } else {
        f64::INFINITY
    }
}

/// Local minimization from `p0` within `bounds`.
pub fn minimize<M: Model + ?Sized>(m: &M, p0: &[f64], bounds: &Bounds, opt: &LmOptions) -> LocalFit {
    let k = m.n_params();
    let nr = m.n_residuals();
    let mut p = p0.to_vec();
    bounds.clamp(&mut p);
    let mut r = vec![0.0; nr];
    let mut rt = vec![0.0; nr];
    let mut jac = vec![0.0; nr * k];
    let mut obj = objective(m, &p, &mut r, opt.delta);
    let mut mu = 1e-3;
    let mut converged = false;
    let mut it = 0;
    if !obj.is_finite() {
        return LocalFit { params: p, objective: obj, iterations: 0, converged: false };
    }
    while it < opt.max_iter {
        it += 1;
        m.jacobian(&p, &mut jac);
        // IRLS weights of the Huber penalty
        let mut jtj = DMatrix::<f64>::zeros(k, k);
        let mut jtr = DVector::<f64>::zeros(k);
        for i in 0..nr {
            let a = r[i].abs();
            let w = if a <= opt.delta { 1.0 } else { opt.delta / a };
            let row = &jac[i * k..(i + 1) * k];
            for x in 0..k {
                let wx = w * row[x];
                jtr[x] += wx * r[i];
                for y in x..k {
                    jtj[(x, y)] += wx * row[y];
                }
            }
        }
        for x in 0..k {
            for y in 0..x {
                jtj[(x, y)] = jtj[(y, x)];
            }
        }
        let maxdiag = (0..k).map(|x| jtj[(x, x)]).fold(0.0, f64::max).max(1e-300);
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for x in 0..k {
                let d = jtj[(x, x)].max(1e-12 * maxdiag);
                a[(x, x)] += mu * d;
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => match a.lu().solve(&(-&jtr)) {
                    Some(s) => s,
                    None => {
                        mu *= 10.0;
                        continue;
                    }
                },
            };
            let mut pt: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            bounds.clamp(&mut pt);
            let ot = objective(m, &pt, &mut rt, opt.delta);
            if ot < obj {
                let rel = (obj - ot) / obj.max(1e-300);
                let moved = pt.iter().zip(&p).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())).fold(0.0, f64::max);
                p = pt;
                std::mem::swap(&mut r, &mut rt);
                obj = ot;
                mu = (mu / 3.0).max(1e-15);
                improved = true;
                if rel < opt.ftol || moved < 1e-14 {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e16 {
                break;
            }
        }
        if !improved {
            converged = true;
            break;
        }
        if converged || obj == 0.0 {
            converged = true;
            break;
        }
    }
    LocalFit { params: p, objective: obj, iterations: it, converged }
}

/// Runs `minimize` from every start; the lowest objective wins and ties go
/// to the lowest start index. Starts run in parallel; the result does not
/// depend on scheduling.
pub fn multistart<M: Model>(m: &M, starts: &[Vec<f64>], bounds: &Bounds, opt: &LmOptions) -> Option<(usize, LocalFit)> {
    let fits: Vec<LocalFit> = starts.par_iter().map(|s| minimize(m, s, bounds, opt)).collect();
    let mut best: Option<(usize, LocalFit)> = None;
    for (i, f) in fits.into_iter().enumerate() {
        if !f.objective.is_finite() {
            continue;
        }
        match &best {
            Some((_, b)) if f.objective >= b.objective => {}
            _ => best = Some((i, f)),
        }
    }
    best
}

/// Huber-weighted linear regression `y ~ X beta` by IRLS.
pub fn huber_linear(x: &DMatrix<f64>, y: &DVector<f64>, delta: f64) -> (DVector<f64>, f64) {
    let n = x.nrows();
    let mut w = DVector::from_element(n, 1.0f64);
    let mut beta = DVector::zeros(x.ncols());
    for _ in 0..100 {
        let mut xw = x.clone();
        let mut yw = y.clone();
        for i in 0..n {
            let s = w[i].sqrt();
            for j in 0..x.ncols() {
                xw[(i, j)] *= s;
            }
            yw[i] *= s;
        }
        let svd = xw.svd(true, true);
        let nb = match svd.solve(&yw, 1e-12) {
            Ok(b) => b,
            Err(_) => break,
        };
        let r = y - x * &nb;
        let nw = r.map(|ri| if ri.abs() <= delta { 1.0 } else { delta / ri.abs() });
        let change = (&nb - &beta).amax();
        beta = nb;
        w = nw;
        if change < 1e-14 * (1.0 + beta.amax()) {
            break;
        }
    }
    let r = y - x * &beta;
    let obj = r.iter().map(|&ri| huber(ri, delta)).sum();
    (beta, obj)
}
