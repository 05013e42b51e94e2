use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, Mat, T};
use crate::rng::{derive_seed, fill_normal, normal_vec, stream, KeyedRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `y = V_t tanh(U_t x) + noise` with a fixed random teacher.
    TeacherStudentRegression,
    /// One-hot targets of the teacher's argmax class.
    SyntheticClassification,
    /// Independent Gaussian targets; used for first-step scaling checks.
    GaussianTargets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub d_in: usize,
    pub d_out: usize,
    pub dataset_size: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_teacher")]
    pub teacher_width: usize,
    #[serde(default = "d_eval")]
    pub eval_size: usize,
}

fn d_teacher() -> usize {
    256
}
fn d_eval() -> usize {
    512
}

impl TaskSpec {
    pub fn teacher_student(d_in: usize, d_out: usize, dataset_size: usize, teacher_width: usize) -> Self {
        TaskSpec {
            kind: TaskKind::TeacherStudentRegression,
            d_in,
            d_out,
            dataset_size,
            noise_std: 0.0,
            seed: 0,
            teacher_width,
            eval_size: d_eval(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 || self.dataset_size == 0 || self.eval_size == 0 {
            return Err(Error::Config("task dimensions and sizes must be positive".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        if self.kind != TaskKind::GaussianTargets && self.teacher_width == 0 {
            return Err(Error::Config("teacher_width must be positive".into()));
        }
        Ok(())
    }
}

/// Materialized dataset. Inputs have unit RMS per coordinate.
#[derive(Debug, Clone)]
pub struct Task {
    pub spec: TaskSpec,
    pub x: Mat,
    pub y: Mat,
    pub eval_x: Mat,
    pub eval_y: Mat,
}

struct Teacher {
    u: Mat,
    v: Mat,
}

impl Teacher {
    fn new(spec: &TaskSpec, seed: u64) -> Self {
        let tw = spec.teacher_width;
        let u = Mat::from_vec(tw, spec.d_in, normal_vec(seed, stream::TEACHER_U, tw * spec.d_in, 1.0 / (spec.d_in as f64).sqrt()));
        let v = Mat::from_vec(spec.d_out, tw, normal_vec(seed, stream::TEACHER_V, spec.d_out * tw, 1.0 / (tw as f64).sqrt()));
        Teacher { u, v }
    }

    fn apply(&self, x: &Mat) -> Mat {
        let mut hid = matmul(1.0, x, T::N, &self.u, T::T);
        hid.data.iter_mut().for_each(|v| *v = v.tanh());
        matmul(1.0, &hid, T::N, &self.v, T::T)
    }
}

impl Task {
    pub fn build(spec: &TaskSpec) -> Result<Task> {
        spec.validate()?;
        let seed = derive_seed(&[spec.seed, 0x7a5c]);
        let mut x = Mat::zeros(spec.dataset_size, spec.d_in);
        fill_normal(seed, stream::DATA_X, 0, 1.0, &mut x.data);
        let mut eval_x = Mat::zeros(spec.eval_size, spec.d_in);
        fill_normal(seed, stream::EVAL_X, 0, 1.0, &mut eval_x.data);
        let (y, eval_y) = match spec.kind {
            TaskKind::GaussianTargets => {
                let mut y = Mat::zeros(spec.dataset_size, spec.d_out);
                fill_normal(seed, stream::DATA_NOISE, 0, 1.0, &mut y.data);
                let mut ey = Mat::zeros(spec.eval_size, spec.d_out);
                fill_normal(seed, stream::DATA_NOISE, y.data.len() as u64, 1.0, &mut ey.data);
                (y, ey)
            }
            TaskKind::TeacherStudentRegression => {
                let t = Teacher::new(spec, seed);
                let mut y = t.apply(&x);
                let noise = normal_vec(seed, stream::DATA_NOISE, y.data.len(), spec.noise_std);
                y.data.iter_mut().zip(noise).for_each(|(a, e)| *a += e);
                (y, t.apply(&eval_x))
            }
            TaskKind::SyntheticClassification => {
                let t = Teacher::new(spec, seed);
                (one_hot(&t.apply(&x)), one_hot(&t.apply(&eval_x)))
            }
        };
        Ok(Task { spec: spec.clone(), x, y, eval_x, eval_y })
    }

    /// Training batch for step `t`, sampled with replacement from the
    /// dataset by a generator keyed on `(seed, t)`.
    pub fn batch(&self, seed: u64, t: usize, size: usize) -> (Mat, Mat) {
        let mut r = KeyedRng::new(derive_seed(&[seed, 0xba7c]), stream::BATCH_INDEX);
        r.seek((t * size) as u64);
        let d = self.spec.dataset_size;
        let mut bx = Mat::zeros(size, self.x.cols);
        let mut by = Mat::zeros(size, self.y.cols);
        for i in 0..size {
            let idx = ((r.uniform() * d as f64) as usize).min(d - 1);
            bx.row_mut(i).copy_from_slice(self.x.row(idx));
            by.row_mut(i).copy_from_slice(self.y.row(idx));
        }
        (bx, by)
    }
}

fn one_hot(scores: &Mat) -> Mat {
    let mut out = Mat::zeros(scores.rows, scores.cols);
    for r in 0..scores.rows {
        let row = scores.row(r);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        out.data[r * scores.cols + best] = 1.0;
    }
    out
}
