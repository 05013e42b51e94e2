use serde::{Deserialize, Serialize};

use crate::linalg::{matmul, rms, Mat, T};

use super::network::NetworkState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub quantity: String,
    pub role: String,
    pub value: f64,
}

/// Norms, update decompositions and alignment ratios at recorded steps.
///
/// Vectors use the RMS norm over all entries of the probe batch; matrices
/// use the entrywise RMS norm.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormTrace {
    pub rows: Vec<TraceRow>,
}

impl NormTrace {
    pub fn push(&mut self, step: usize, quantity: &str, role: &str, value: f64) {
        self.rows.push(TraceRow { step, quantity: quantity.to_string(), role: role.to_string(), value });
    }

    pub fn get(&self, step: usize, quantity: &str, role: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.step == step && r.quantity == quantity && r.role == role)
            .map(|r| r.value)
    }

    pub fn steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rows.iter().map(|r| r.step).collect();
        s.dedup();
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,quantity,role,value\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{:e}\n", r.step, r.quantity, r.role, r.value));
        }
        out
    }
}

fn ratio(num: f64, a: f64, b: f64) -> f64 {
    let den = a * b;
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Output-layer weight as a `d_out x n` matrix (transposes U when tied).
fn out_weight(s: &NetworkState) -> Mat {
    if s.cfg.weight_tied {
        s.params.u.transpose()
    } else {
        s.params.v.clone()
    }
}

/// Records the state at `step`. With `prev` (the state one update earlier)
/// also records update norms, the three-term decompositions of dz and df
/// and the raw alignment ratios.
pub fn record(trace: &mut NormTrace, step: usize, prev: Option<&NetworkState>, cur: &NetworkState, probe: &Mat) {
    let c1 = match cur.forward(probe) {
        Ok(c) => c,
        Err(_) => return,
    };
    let v1 = out_weight(cur);
    let p1 = &cur.params;
    trace.push(step, "weight_rms", "Input", p1.u.rms());
    trace.push(step, "weight_rms", "Hidden", p1.w.rms());
    trace.push(step, "weight_rms", "Output", v1.rms());
    trace.push(step, "act_rms", "h", c1.h.rms());
    trace.push(step, "act_rms", "z", c1.z.rms());
    trace.push(step, "act_rms", "f", c1.f.rms());
    let Some(prev) = prev else { return };
    let c0 = match prev.forward(probe) {
        Ok(c) => c,
        Err(_) => return,
    };
    let v0 = out_weight(prev);
    let p0 = &prev.params;
    let du = p1.u.sub(&p0.u);
    let dw = p1.w.sub(&p0.w);
    let dv = v1.sub(&v0);
    trace.push(step, "dweight_rms", "Input", du.rms());
    trace.push(step, "dweight_rms", "Hidden", dw.rms());
    trace.push(step, "dweight_rms", "Output", dv.rms());
    trace.push(step, "dact_rms", "h", c1.h.sub(&c0.h).rms());
    trace.push(step, "dact_rms", "z", c1.z.sub(&c0.z).rms());
    trace.push(step, "dact_rms", "f", c1.f.sub(&c0.f).rms());

    let [_, mw, mv] = cur.mult;
    // dz = mw (dW a0 + W0 da + dW da), inputs are rows of the probe batch
    let da = c1.a.sub(&c0.a);
    let wu = matmul(1.0, &c0.a, T::N, &dw, T::T);
    let au = matmul(1.0, &da, T::N, &p0.w, T::T);
    let so = matmul(1.0, &da, T::N, &dw, T::T);
    trace.push(step, "term_wu", "z", mw * wu.rms());
    trace.push(step, "term_au", "z", mw * au.rms());
    trace.push(step, "term_so", "z", mw * so.rms());
    trace.push(step, "align_rho", "Hidden", ratio(wu.rms(), dw.rms(), c0.a.rms()));
    trace.push(step, "align_omega", "Hidden", ratio(au.rms(), p0.w.rms(), rms(&da.data)));
    trace.push(step, "align_sigma", "Hidden", ratio(so.rms(), dw.rms(), rms(&da.data)));

    let dzin = c1.zin.sub(&c0.zin);
    let wu = matmul(1.0, &c0.zin, T::N, &dv, T::T);
    let au = matmul(1.0, &dzin, T::N, &v0, T::T);
    let so = matmul(1.0, &dzin, T::N, &dv, T::T);
    trace.push(step, "term_wu", "f", mv * wu.rms());
    trace.push(step, "term_au", "f", mv * au.rms());
    trace.push(step, "term_so", "f", mv * so.rms());
    trace.push(step, "align_rho", "Output", ratio(wu.rms(), dv.rms(), c0.zin.rms()));
    trace.push(step, "align_omega", "Output", ratio(au.rms(), v0.rms(), dzin.rms()));
    trace.push(step, "align_sigma", "Output", ratio(so.rms(), dv.rms(), dzin.rms()));
}
