use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, matmul, Mat, T};
use crate::param::{pow_width, LayerRole, ParamSpec};
use crate::rng::{derive_seed, fill_normal, stream};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Identity,
    Relu,
    Tanh,
}

impl Nonlinearity {
    fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Tanh => x.tanh(),
        }
    }

    fn deriv(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub width: usize,
    pub d_in: usize,
    pub d_out: usize,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub layernorm: bool,
    #[serde(default)]
    pub attention_probe: bool,
    #[serde(default = "default_head_dim")]
    pub head_dim: usize,
    #[serde(default)]
    pub weight_tied: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_head_dim() -> usize {
    64
}

impl NetworkConfig {
    pub fn new(width: usize, d_in: usize, d_out: usize) -> Self {
        NetworkConfig {
            width,
            d_in,
            d_out,
            nonlinearity: Nonlinearity::Identity,
            layernorm: false,
            attention_probe: false,
            head_dim: default_head_dim(),
            weight_tied: false,
            seed: 0,
        }
    }

    pub fn validate(&self, spec: &ParamSpec) -> Result<()> {
        if self.width == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(Error::Config("width, d_in and d_out must be positive".into()));
        }
        if self.weight_tied && self.d_in != self.d_out {
            return Err(Error::Config("weight tying requires d_in == d_out".into()));
        }
        if self.weight_tied != spec.weight_tied {
            return Err(Error::Config(format!(
                "network weight_tied={} but spec '{}' has weight_tied={}",
                self.weight_tied, spec.name, spec.weight_tied
            )));
        }
        if self.attention_probe && (spec.attn_exponent.is_none() || self.head_dim == 0) {
            return Err(Error::Config("attention probe needs attn_exponent and head_dim >= 1".into()));
        }
        for role in LayerRole::MATRICES {
            let e = spec.exps(role)?;
            if e.a.is_none() || e.b.is_none() || e.c.is_none() {
                return Err(Error::Config(format!("spec '{}' lacks exponents for {role}", spec.name)));
            }
        }
        if self.layernorm && spec.exps(LayerRole::LayerNorm)?.c.is_none() {
            return Err(Error::Config("layernorm enabled but spec has no LayerNorm exponent".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        param_count(self.width, self.d_in, self.d_out, self.layernorm, self.weight_tied)
    }
}

/// Trainable parameter count of the three-layer network.
pub fn param_count(n: usize, d_in: usize, d_out: usize, layernorm: bool, tied: bool) -> usize {
    let out = if tied { 0 } else { n * d_out };
    d_in * n + n * n + out + if layernorm { 4 * n } else { 0 }
}

/// Trainable tensors. `v` is empty when tied, `ln` packs
/// `[gain_h, bias_h, gain_z, bias_z]` and is empty without LayerNorm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub u: Mat,
    pub w: Mat,
    pub v: Mat,
    pub ln: Vec<f64>,
}

impl Params {
    pub fn zeros_like(p: &Params) -> Params {
        Params {
            u: Mat::zeros(p.u.rows, p.u.cols),
            w: Mat::zeros(p.w.rows, p.w.cols),
            v: Mat::zeros(p.v.rows, p.v.cols),
            ln: vec![0.0; p.ln.len()],
        }
    }

    /// (role, tensor) pairs in a fixed order.
    pub fn tensors(&self) -> [(LayerRole, &[f64]); 4] {
        [
            (LayerRole::Input, &self.u.data[..]),
            (LayerRole::Hidden, &self.w.data[..]),
            (LayerRole::Output, &self.v.data[..]),
            (LayerRole::LayerNorm, &self.ln[..]),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(LayerRole, &mut [f64]); 4] {
        [
            (LayerRole::Input, &mut self.u.data[..]),
            (LayerRole::Hidden, &mut self.w.data[..]),
            (LayerRole::Output, &mut self.v.data[..]),
            (LayerRole::LayerNorm, &mut self.ln[..]),
        ]
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub spec: ParamSpec,
    pub cfg: NetworkConfig,
    pub params: Params,
    /// Forward multipliers `n^-a` for U, W, V.
    pub mult: [f64; 3],
}

/// Samples the initial network. Entry `i` of a weight matrix is the keyed
/// standard normal `(seed, layer, i)` times `n^-b`.
pub fn init_network(spec: &ParamSpec, cfg: &NetworkConfig) -> Result<NetworkState> {
    cfg.validate(spec)?;
    let n = cfg.width as f64;
    let eu = spec.exps(LayerRole::Input)?;
    let ew = spec.exps(LayerRole::Hidden)?;
    let ev = spec.exps(LayerRole::Output)?;
    let seed = derive_seed(&[cfg.seed, 0x1417]);
    let mut u = Mat::zeros(cfg.width, cfg.d_in);
    fill_normal(seed, stream::INIT_U, 0, pow_width(n, -eu.b.unwrap()), &mut u.data);
    let mut w = Mat::zeros(cfg.width, cfg.width);
    fill_normal(seed, stream::INIT_W, 0, pow_width(n, -ew.b.unwrap()), &mut w.data);
    let v = if cfg.weight_tied {
        Mat::zeros(0, 0)
    } else {
        let mut v = Mat::zeros(cfg.d_out, cfg.width);
        fill_normal(seed, stream::INIT_V, 0, pow_width(n, -ev.b.unwrap()), &mut v.data);
        v
    };
    let ln = if cfg.layernorm {
        let mut ln = vec![0.0; 4 * cfg.width];
        ln[..cfg.width].iter_mut().for_each(|g| *g = 1.0);
        ln[2 * cfg.width..3 * cfg.width].iter_mut().for_each(|g| *g = 1.0);
        ln
    } else {
        Vec::new()
    };
    Ok(NetworkState {
        spec: spec.clone(),
        cfg: cfg.clone(),
        params: Params { u, w, v, ln },
        mult: [
            pow_width(n, -eu.a.unwrap()),
            pow_width(n, -ew.a.unwrap()),
            pow_width(n, -ev.a.unwrap()),
        ],
    })
}

/// LayerNorm statistics for one activation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LnCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

/// Intermediates of a batched forward pass. Rows are examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub x: Mat,
    /// `n^-a_u U x`.
    pub h: Mat,
    /// Input of W: `phi(h)`, LayerNorm'd when enabled.
    pub a: Mat,
    /// `n^-a_w W a`.
    pub z: Mat,
    /// Input of V: `z`, LayerNorm'd when enabled.
    pub zin: Mat,
    pub f: Mat,
    ln_h: Option<LnCache>,
    ln_z: Option<LnCache>,
}

fn layernorm_fwd(x: &Mat, gain: &[f64], bias: &[f64]) -> (Mat, LnCache) {
    let n = x.cols;
    let mut out = Mat::zeros(x.rows, n);
    let mut xhat = Mat::zeros(x.rows, n);
    let mut inv_std = vec![0.0; x.rows];
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        let xh = xhat.row_mut(r);
        for j in 0..n {
            xh[j] = (row[j] - mean) * is;
        }
        let o = out.row_mut(r);
        for j in 0..n {
            o[j] = xhat.data[r * n + j] * gain[j] + bias[j];
        }
    }
    (out, LnCache { xhat, inv_std })
}

/// Returns dx and accumulates gain/bias gradients.
fn layernorm_bwd(dy: &Mat, c: &LnCache, gain: &[f64], dgain: &mut [f64], dbias: &mut [f64]) -> Mat {
    let n = dy.cols;
    let mut dx = Mat::zeros(dy.rows, n);
    let mut dxhat = vec![0.0; n];
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = c.xhat.row(r);
        for j in 0..n {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / n as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        let is = c.inv_std[r];
        let o = dx.row_mut(r);
        for j in 0..n {
            o[j] = is * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

impl NetworkState {
    pub fn width(&self) -> usize {
        self.cfg.width
    }

    fn ln_slices(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let n = self.cfg.width;
        let l = &self.params.ln;
        (&l[..n], &l[n..2 * n], &l[2 * n..3 * n], &l[3 * n..])
    }

    /// Batched forward pass; `x` is `batch x d_in`.
    pub fn forward(&self, x: &Mat) -> Result<Forward> {
        if x.cols != self.cfg.d_in {
            return Err(Error::Shape(format!("input has {} features, expected {}", x.cols, self.cfg.d_in)));
        }
        let [mu, mw, mv] = self.mult;
        let p = &self.params;
        let h = matmul(mu, x, T::N, &p.u, T::T);
        let nl = self.cfg.nonlinearity;
        let mut a = h.clone();
        if nl != Nonlinearity::Identity {
            a.data.iter_mut().for_each(|v| *v = nl.apply(*v));
        }
        let mut ln_h = None;
        let mut ln_z = None;
        if self.cfg.layernorm {
            let (g1, b1, _, _) = self.ln_slices();
            let (o, c) = layernorm_fwd(&a, g1, b1);
            a = o;
            ln_h = Some(c);
        }
        let z = matmul(mw, &a, T::N, &p.w, T::T);
        let zin = if self.cfg.layernorm {
            let (_, _, g2, b2) = self.ln_slices();
            let (o, c) = layernorm_fwd(&z, g2, b2);
            ln_z = Some(c);
            o
        } else {
            z.clone()
        };
        let f = if self.cfg.weight_tied {
            matmul(mv, &zin, T::N, &p.u, T::N)
        } else {
            matmul(mv, &zin, T::N, &p.v, T::T)
        };
        Ok(Forward { x: x.clone(), h, a, z, zin, f, ln_h, ln_z })
    }

    /// Gradients of a loss whose derivative w.r.t. `f` is `df` (already
    /// including any batch averaging).
    pub fn backward(&self, c: &Forward, df: &Mat) -> Result<Params> {
        if (df.rows, df.cols) != (c.f.rows, c.f.cols) {
            return Err(Error::Shape("loss gradient shape differs from output".into()));
        }
        let [mu, mw, mv] = self.mult;
        let p = &self.params;
        let n = self.cfg.width;
        let mut g = Params::zeros_like(p);

        let dzin = if self.cfg.weight_tied {
            // f = mv * zin * U, so dU += mv * zin^T df
            gemm(mv, &c.zin, T::T, df, T::N, 0.0, &mut g.u);
            matmul(mv, df, T::N, &p.u, T::T)
        } else {
            gemm(mv, df, T::T, &c.zin, T::N, 0.0, &mut g.v);
            matmul(mv, df, T::N, &p.v, T::N)
        };
        let dz = match &c.ln_z {
            Some(lc) => {
                let (head, tail) = g.ln.split_at_mut(3 * n);
                let dg = &mut head[2 * n..];
                let (_, _, g2, _) = self.ln_slices();
                layernorm_bwd(&dzin, lc, g2, dg, tail)
            }
            None => dzin,
        };
        gemm(mw, &dz, T::T, &c.a, T::N, 0.0, &mut g.w);
        let da = matmul(mw, &dz, T::N, &p.w, T::N);
        let mut dphi = match &c.ln_h {
            Some(lc) => {
                let (head, _) = g.ln.split_at_mut(2 * n);
                let (dg, db) = head.split_at_mut(n);
                let (g1, _, _, _) = self.ln_slices();
                layernorm_bwd(&da, lc, g1, dg, db)
            }
            None => da,
        };
        let nl = self.cfg.nonlinearity;
        if nl != Nonlinearity::Identity {
            for (d, hv) in dphi.data.iter_mut().zip(&c.h.data) {
                *d *= nl.deriv(*hv);
            }
        }
        gemm(mu, &dphi, T::T, &c.x, T::N, 1.0, &mut g.u);
        Ok(g)
    }
}

/// Mean squared error over batch and outputs, and its gradient w.r.t. `f`.
pub fn mse(f: &Mat, y: &Mat) -> (f64, Mat) {
    let m = (f.rows * f.cols) as f64;
    let mut grad = Mat::zeros(f.rows, f.cols);
    let mut loss = 0.0;
    for i in 0..f.data.len() {
        let r = f.data[i] - y.data[i];
        loss += r * r;
        grad.data[i] = 2.0 * r / m;
    }
    (loss / m, grad)
}

pub fn mse_loss(f: &Mat, y: &Mat) -> f64 {
    let m = (f.rows * f.cols) as f64;
    f.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m
}
