//! Cubic smoothing spline controlled by a residual budget.
//!
//! The spline lives on not-a-knot knots (interior knots at `x[2..n-2]`), so
//! with no smoothing it interpolates the data. Smoothing penalizes the jumps
//! of the third derivative at the interior knots; driving the penalty to
//! infinity leaves a single cubic. The penalty weight is chosen so that the
//! residual sum of squares equals the budget `S`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SplineRepr {
    BSpline { knots: Vec<f64>, coef: Vec<f64> },
    /// Polynomial in `(x - shift) / scale`, lowest degree first.
    Cubic { shift: f64, scale: f64, coef: [f64; 4] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpline {
    pub repr: SplineRepr,
    /// Residual sum of squares on the data.
    pub ssr: f64,
    /// Penalty weight; `f64::INFINITY` for the least-squares cubic.
    pub lambda: f64,
}

fn find_span(t: &[f64], nb: usize, x: f64) -> usize {
    // index i with t[i] <= x < t[i+1], clamped to the last non-empty span
    let lo = 3;
    let hi = nb; // t[nb] is the right boundary
    if x >= t[hi] {
        return hi - 1;
    }
    if x <= t[lo] {
        return lo;
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > 1 {
        let m = (a + b) / 2;
        if x >= t[m] {
            a = m;
        } else {
            b = m;
        }
    }
    a
}

/// Values of the 4 non-zero cubic B-splines at `x` (indices span-3..=span).
fn basis_funs(t: &[f64], span: usize, x: f64) -> [f64; 4] {
    let mut n = [0.0; 4];
    let mut left = [0.0; 4];
    let mut right = [0.0; 4];
    n[0] = 1.0;
    for j in 1..4 {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let den = right[r + 1] + left[j - r];
            let tmp = if den != 0.0 { n[r] / den } else { 0.0 };
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    n
}

/// Third derivatives (constant on a span) of the 4 active cubic B-splines.
fn third_derivs(t: &[f64], span: usize) -> [f64; 4] {
    // d3 B_{i,4} = 6 * sum of order-1 indicator weights; evaluate through
    // the derivative recurrence at the span midpoint
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        let i = span - 3 + k;
        *o = deriv_rec(t, i, 4, 3, span);
    }
    out
}

fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// m-th derivative of B_{i,k} on span `span` where it is a polynomial of
/// degree k-1; for m = k-1 the result is constant.
fn deriv_rec(t: &[f64], i: usize, k: usize, m: usize, span: usize) -> f64 {
    if m == 0 {
        // only called with k == 1 here
        return if i == span { 1.0 } else { 0.0 };
    }
    let kk = (k - 1) as f64;
    kk * (div(deriv_rec(t, i, k - 1, m - 1, span), t[i + k - 1] - t[i])
        - div(deriv_rec(t, i + 1, k - 1, m - 1, span), t[i + k] - t[i + 1]))
}

fn not_a_knot(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut t = vec![x[0]; 4];
    t.extend_from_slice(&x[2..n - 2]);
    t.extend(std::iter::repeat(x[n - 1]).take(4));
    t
}

fn ls_cubic(x: &[f64], y: &[f64]) -> Result<(SplineRepr, f64)> {
    let n = x.len();
    let shift = (x[0] + x[n - 1]) / 2.0;
    let scale = ((x[n - 1] - x[0]) / 2.0).max(1e-300);
    let a = DMatrix::from_fn(n, 4, |i, j| ((x[i] - shift) / scale).powi(j as i32));
    let b = DVector::from_column_slice(y);
    let sol = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Fit(format!("least-squares cubic: {e}")))?;
    let ssr = (&a * &sol - &b).norm_squared();
    Ok((SplineRepr::Cubic { shift, scale, coef: [sol[0], sol[1], sol[2], sol[3]] }, ssr))
}

impl SmoothingSpline {
    /// Fits with residual budget `budget` (sum of squared residuals).
    pub fn fit(x: &[f64], y: &[f64], budget: f64) -> Result<SmoothingSpline> {
        let n = x.len();
        if n < 4 || y.len() != n {
            return Err(Error::Fit(format!("need at least 4 points, got {n}")));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Fit("abscissae must be finite and strictly increasing".into()));
        }
        let (cubic, cubic_ssr) = ls_cubic(x, y)?;
        if budget >= cubic_ssr || n == 4 {
            return Ok(SmoothingSpline { repr: cubic, ssr: cubic_ssr, lambda: f64::INFINITY });
        }
        let t = not_a_knot(x);
        let nb = n;
        let mut bm = DMatrix::<f64>::zeros(n, nb);
        for (r, &xv) in x.iter().enumerate() {
            let span = find_span(&t, nb, xv);
            let v = basis_funs(&t, span, xv);
            for k in 0..4 {
                bm[(r, span - 3 + k)] = v[k];
            }
        }
        // jump of the third derivative at each interior knot t[4..n]
        let n_int = n - 4;
        let mut dm = DMatrix::<f64>::zeros(n_int, nb);
        for j in 0..n_int {
            let kn = 4 + j;
            let right = third_derivs(&t, kn);
            let left = third_derivs(&t, kn - 1);
            for k in 0..4 {
                dm[(j, kn - 3 + k)] += right[k];
                dm[(j, kn - 4 + k)] -= left[k];
            }
        }
        let yv = DVector::from_column_slice(y);
        let btb = bm.transpose() * &bm;
        let bty = bm.transpose() * &yv;
        let dtd = dm.transpose() * &dm;
        let solve = |lam: f64| -> Option<(DVector<f64>, f64)> {
            let a = &btb + &dtd * lam;
            let c = a.lu().solve(&bty)?;
            let ssr = (&bm * &c - &yv).norm_squared();
            Some((c, ssr))
        };
        let interp = bm
            .clone()
            .lu()
            .solve(&yv)
            .ok_or_else(|| Error::Fit("singular interpolation system".into()))?;
        if budget <= 0.0 {
            let ssr = (&bm * &interp - &yv).norm_squared();
            return Ok(SmoothingSpline {
                repr: SplineRepr::BSpline { knots: t, coef: interp.iter().copied().collect() },
                ssr,
                lambda: 0.0,
            });
        }
        let scale = btb.trace() / dtd.trace().max(1e-300);
        let (mut lo, mut hi) = ((1e-14 * scale).ln(), (1e14 * scale).ln());
        let mut best = None;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            match solve(mid.exp()) {
                Some((c, ssr)) => {
                    if ssr > budget {
                        hi = mid;
                    } else {
                        lo = mid;
                        best = Some((c, ssr, mid.exp()));
                    }
                    if (ssr - budget).abs() <= 1e-12 * budget.max(1e-300) {
                        break;
                    }
                }
                None => hi = mid,
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        let (c, ssr, lam) = match best {
            Some(b) => b,
            None => {
                let ssr = (&bm * &interp - &yv).norm_squared();
                (interp, ssr, 0.0)
            }
        };
        Ok(SmoothingSpline { repr: SplineRepr::BSpline { knots: t, coef: c.iter().copied().collect() }, ssr, lambda: lam })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.repr {
            SplineRepr::Cubic { shift, scale, coef } => {
                let u = (x - shift) / scale;
                coef[0] + u * (coef[1] + u * (coef[2] + u * coef[3]))
            }
            SplineRepr::BSpline { knots, coef } => {
                let nb = coef.len();
                let span = find_span(knots, nb, x);
                let v = basis_funs(knots, span, x);
                (0..4).map(|k| v[k] * coef[span - 3 + k]).sum()
            }
        }
    }
}

/// `grid` uniformly spaced points over `[lo, hi]`, endpoints included.
pub fn uniform_grid(lo: f64, hi: f64, grid: usize) -> Vec<f64> {
    if grid == 1 {
        return vec![lo];
    }
    (0..grid)
        .map(|i| if i == grid - 1 { hi } else { lo + (hi - lo) * i as f64 / (grid - 1) as f64 })
        .collect()
}
