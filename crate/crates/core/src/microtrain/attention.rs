use crate::linalg::{matmul, Mat, T};
use crate::rng::{derive_seed, fill_normal, stream};

/// Rows of the probe's query and key matrices.
pub const ATTN_ROWS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnProbe {
    /// Q and K drawn independently.
    Independent,
    /// K = Q.
    Aligned,
}

fn unit_rms_rows(seed: u64, s: u64, d: usize) -> Mat {
    let mut m = Mat::zeros(ATTN_ROWS, d);
    fill_normal(seed, s, 0, 1.0, &mut m.data);
    for r in 0..ATTN_ROWS {
        let row = m.row_mut(r);
        let k = crate::linalg::rms(row);
        row.iter_mut().for_each(|x| *x /= k);
    }
    m
}

/// `rms(Q K^T) / (rms(Q) rms(K))` for random unit-RMS rows.
pub fn attention_logit_ratio(d: usize, seed: u64, probe: AttnProbe) -> f64 {
    let seed = derive_seed(&[seed, d as u64, 0xa77]);
    let q = unit_rms_rows(seed, stream::ATTN_Q, d);
    let k = match probe {
        AttnProbe::Independent => unit_rms_rows(seed, stream::ATTN_K, d),
        AttnProbe::Aligned => q.clone(),
    };
    let logits = matmul(1.0, &q, T::N, &k, T::T);
    logits.rms() / (q.rms() * k.rms())
}

/// Independent-Q/K logit ratio; grows like `d^(1/2)`.
pub fn measure_attention_logit_ratio(d: usize, seed: u64) -> f64 {
    attention_logit_ratio(d, seed, AttnProbe::Independent)
}
