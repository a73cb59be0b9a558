use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::gridworld::Action;
use crate::rng;

/// Weights of a single-layer GRU policy with a goal-embedding table and a
/// linear action head.
///
/// Update convention: `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = z ⊙ h + (1 - z) ⊙ h̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_h: Matrix,
    /// One row per goal class; empty for point-goal agents.
    pub goal_table: Matrix,
    pub policy_w: Matrix,
    pub policy_b: Matrix,
}

pub const TENSOR_NAMES: [&str; 12] = [
    "W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h", "goal_table", "policy_W", "policy_b",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    pub goal_dim: usize,
}

impl GruParams {
    pub fn zeros(s: GruShape) -> Self {
        let (i, h) = (s.input_dim, s.hidden_dim);
        GruParams {
            w_z: Matrix::zeros(h, i),
            w_r: Matrix::zeros(h, i),
            w_h: Matrix::zeros(h, i),
            u_z: Matrix::zeros(h, h),
            u_r: Matrix::zeros(h, h),
            u_h: Matrix::zeros(h, h),
            b_z: Matrix::zeros(h, 1),
            b_r: Matrix::zeros(h, 1),
            b_h: Matrix::zeros(h, 1),
            goal_table: Matrix::zeros(s.n_classes, s.goal_dim),
            policy_w: Matrix::zeros(Action::COUNT, h),
            policy_b: Matrix::zeros(Action::COUNT, 1),
        }
    }

    /// Uniform `±1/sqrt(hidden)` weights and standard-normal goal embeddings.
    /// With no training this is the random-initialization baseline.
    pub fn init(s: GruShape, seed: u64) -> Self {
        let mut p = GruParams::zeros(s);
        let bound = 1.0 / (s.hidden_dim as f64).sqrt();
        let mut rng = rng::derived(seed, "gru-init", 0);
        for (name, t) in p.tensors_mut() {
            if name == "goal_table" {
                continue;
            }
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        let mut grng = rng::derived(seed, "goal-table", 0);
        p.goal_table
            .data
            .iter_mut()
            .for_each(|v| *v = StandardNormal.sample(&mut grng));
        p
    }

    pub fn shape(&self) -> GruShape {
        GruShape {
            input_dim: self.w_z.cols,
            hidden_dim: self.w_z.rows,
            n_classes: self.goal_table.rows,
            goal_dim: self.goal_table.cols,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols
    }

    pub fn zeros_like(&self) -> Self {
        GruParams::zeros(self.shape())
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix); 12] {
        [
            ("W_z", &self.w_z),
            ("W_r", &self.w_r),
            ("W_h", &self.w_h),
            ("U_z", &self.u_z),
            ("U_r", &self.u_r),
            ("U_h", &self.u_h),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
            ("goal_table", &self.goal_table),
            ("policy_W", &self.policy_w),
            ("policy_b", &self.policy_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 12] {
        [
            ("W_z", &mut self.w_z),
            ("W_r", &mut self.w_r),
            ("W_h", &mut self.w_h),
            ("U_z", &mut self.u_z),
            ("U_r", &mut self.u_r),
            ("U_h", &mut self.u_h),
            ("b_z", &mut self.b_z),
            ("b_r", &mut self.b_r),
            ("b_h", &mut self.b_h),
            ("goal_table", &mut self.goal_table),
            ("policy_W", &mut self.policy_w),
            ("policy_b", &mut self.policy_b),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.shape();
        let expect = |name: &'static str, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
            if m.rows != rows || m.cols != cols {
                return Err(Error::validation(
                    "params.shape",
                    format!("{name} is {}x{}, expected {rows}x{cols}", m.rows, m.cols),
                ));
            }
            if !m.is_finite() {
                return Err(Error::Numeric(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        let (i, h) = (s.input_dim, s.hidden_dim);
        expect("W_r", &self.w_r, h, i)?;
        expect("W_h", &self.w_h, h, i)?;
        expect("U_z", &self.u_z, h, h)?;
        expect("U_r", &self.u_r, h, h)?;
        expect("U_h", &self.u_h, h, h)?;
        expect("b_z", &self.b_z, h, 1)?;
        expect("b_r", &self.b_r, h, 1)?;
        expect("b_h", &self.b_h, h, 1)?;
        expect("policy_W", &self.policy_w, Action::COUNT, h)?;
        expect("policy_b", &self.policy_b, Action::COUNT, 1)?;
        expect("W_z", &self.w_z, h, i)?;
        expect("goal_table", &self.goal_table, s.n_classes, s.goal_dim)
    }

    pub fn to_file(&self) -> ParamsFile {
        self.tensors()
            .into_iter()
            .map(|(name, m)| {
                let shape = if name.starts_with("b_") || name == "policy_b" {
                    vec![m.rows]
                } else {
                    vec![m.rows, m.cols]
                };
                (name.to_string(), TensorEntry { shape, data: m.data.clone() })
            })
            .collect()
    }

    pub fn from_file(mut file: ParamsFile, origin: &str) -> Result<Self> {
        let mut take = |name: &str| -> Result<Matrix> {
            let t = file.remove(name).ok_or_else(|| Error::Parse {
                origin: origin.into(),
                detail: format!("missing tensor {name}"),
            })?;
            let (rows, cols) = match t.shape.as_slice() {
                [n] => (*n, 1),
                [r, c] => (*r, *c),
                _ => {
                    return Err(Error::Parse { origin: origin.into(), detail: format!("{name}: bad shape {:?}", t.shape) })
                }
            };
            if rows * cols != t.data.len() {
                return Err(Error::Parse {
                    origin: origin.into(),
                    detail: format!("{name}: shape {:?} does not match {} values", t.shape, t.data.len()),
                });
            }
            Ok(Matrix { rows, cols, data: t.data })
        };
        let p = GruParams {
            w_z: take("W_z")?,
            w_r: take("W_r")?,
            w_h: take("W_h")?,
            u_z: take("U_z")?,
            u_r: take("U_r")?,
            u_h: take("U_h")?,
            b_z: take("b_z")?,
            b_r: take("b_r")?,
            b_h: take("b_h")?,
            goal_table: take("goal_table")?,
            policy_w: take("policy_W")?,
            policy_b: take("policy_b")?,
        };
        if let Some(extra) = file.keys().next() {
            return Err(Error::Parse { origin: origin.into(), detail: format!("unknown tensor {extra}") });
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("params serialize")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            origin: origin.into(),
            detail: e.to_string(),
        })?;
        GruParams::from_file(file, origin)
    }
}

pub type ParamsFile = BTreeMap<String, TensorEntry>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of one GRU update, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub cand: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn gru_step(p: &GruParams, x: &[f64], h_prev: &[f64]) -> StepCache {
    let hd = p.hidden_dim();
    let mut z = p.b_z.data.clone();
    p.w_z.mul_vec_acc(x, &mut z);
    p.u_z.mul_vec_acc(h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = p.b_r.data.clone();
    p.w_r.mul_vec_acc(x, &mut r);
    p.u_r.mul_vec_acc(h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut cand = p.b_h.data.clone();
    p.w_h.mul_vec_acc(x, &mut cand);
    p.u_h.mul_vec_acc(&rh, &mut cand);
    cand.iter_mut().for_each(|v| *v = v.tanh());

    let h = (0..hd).map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * cand[i]).collect();
    StepCache { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, cand, h }
}

/// One GRU update with dimension checks.
pub fn gru_forward(p: &GruParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    if x.len() != p.input_dim() {
        return Err(Error::Dimension { context: "gru input", expected: p.input_dim(), got: x.len() });
    }
    if h_prev.len() != p.hidden_dim() {
        return Err(Error::Dimension { context: "gru hidden", expected: p.hidden_dim(), got: h_prev.len() });
    }
    Ok(gru_step(p, x, h_prev).h)
}

/// Backpropagates `dh` (gradient w.r.t. the new hidden state) through one
/// update. Accumulates parameter gradients into `g`, and writes gradients
/// w.r.t. the previous hidden state and the input.
pub fn gru_step_backward(p: &GruParams, c: &StepCache, dh: &[f64], g: &mut GruParams, dh_prev: &mut [f64], dx: &mut [f64]) {
    let hd = dh.len();
    let mut da_z = vec![0.0; hd];
    let mut da_h = vec![0.0; hd];
    for i in 0..hd {
        let dz = dh[i] * (c.h_prev[i] - c.cand[i]);
        da_z[i] = dz * c.z[i] * (1.0 - c.z[i]);
        let dcand = dh[i] * (1.0 - c.z[i]);
        da_h[i] = dcand * (1.0 - c.cand[i] * c.cand[i]);
        dh_prev[i] = dh[i] * c.z[i];
    }
    let rh: Vec<f64> = c.r.iter().zip(&c.h_prev).map(|(a, b)| a * b).collect();
    g.w_h.add_outer(&da_h, &c.x);
    g.u_h.add_outer(&da_h, &rh);
    g.b_h.data.iter_mut().zip(&da_h).for_each(|(b, d)| *b += d);

    let mut drh = vec![0.0; hd];
    p.u_h.mul_t_vec_acc(&da_h, &mut drh);
    let mut da_r = vec![0.0; hd];
    for i in 0..hd {
        da_r[i] = drh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]);
        dh_prev[i] += drh[i] * c.r[i];
    }

    g.w_z.add_outer(&da_z, &c.x);
    g.u_z.add_outer(&da_z, &c.h_prev);
    g.b_z.data.iter_mut().zip(&da_z).for_each(|(b, d)| *b += d);
    g.w_r.add_outer(&da_r, &c.x);
    g.u_r.add_outer(&da_r, &c.h_prev);
    g.b_r.data.iter_mut().zip(&da_r).for_each(|(b, d)| *b += d);

    p.u_z.mul_t_vec_acc(&da_z, dh_prev);
    p.u_r.mul_t_vec_acc(&da_r, dh_prev);

    dx.iter_mut().for_each(|v| *v = 0.0);
    p.w_z.mul_t_vec_acc(&da_z, dx);
    p.w_r.mul_t_vec_acc(&da_r, dx);
    p.w_h.mul_t_vec_acc(&da_h, dx);
}

pub fn policy_logits(p: &GruParams, h: &[f64]) -> [f64; Action::COUNT] {
    let mut out = [0.0; Action::COUNT];
    out.copy_from_slice(&p.policy_b.data);
    p.policy_w.mul_vec_acc(h, &mut out);
    out
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shape(i: usize, h: usize) -> GruShape {
        GruShape { input_dim: i, hidden_dim: h, n_classes: 2, goal_dim: 2 }
    }

    #[test]
    fn zero_params_halve_the_state() {
        let p = GruParams::zeros(shape(3, 4));
        let h = gru_forward(&p, &[1.0, -2.0, 3.0], &[0.4, -0.8, 1.0, 0.0]).unwrap();
        assert_eq!(h, vec![0.2, -0.4, 0.5, 0.0]);
        let h0 = gru_forward(&p, &[1.0, 1.0, 1.0], &[0.0; 4]).unwrap();
        assert_eq!(h0, vec![0.0; 4]);
    }

    #[test]
    fn saturated_gates_pass_the_candidate() {
        let mut p = GruParams::zeros(shape(1, 1));
        p.b_h.data[0] = 20.0;
        p.b_z.data[0] = -40.0;
        let h = gru_forward(&p, &[0.3], &[0.0]).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = GruParams::zeros(shape(3, 4));
        assert!(matches!(gru_forward(&p, &[1.0], &[0.0; 4]), Err(Error::Dimension { .. })));
        assert!(matches!(gru_forward(&p, &[1.0; 3], &[0.0; 2]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn params_file_round_trip() {
        let p = GruParams::init(shape(5, 3), 9);
        let back = GruParams::from_json(&p.to_json(), "mem").unwrap();
        assert_eq!(p, back);
        let mut file = p.to_file();
        file.get_mut("U_h").unwrap().data.pop();
        assert!(GruParams::from_file(file, "mem").is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.0, 1.0, 1.0, -1.0]), 1);
        assert_eq!(argmax(&[0.0; 6]), 0);
    }

    proptest! {
        #[test]
        fn update_stays_between_state_and_unit_interval(seed in 0u64..1000, scale in 0.1f64..5.0) {
            let mut p = GruParams::init(shape(4, 6), seed);
            for (_, t) in p.tensors_mut() { t.scale(scale); }
            let mut rng = crate::rng::seeded(seed);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let h0: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let h = gru_forward(&p, &x, &h0).unwrap();
            for (a, b) in h.iter().zip(&h0) {
                prop_assert!(a.abs() <= b.abs().max(1.0) + 1e-12);
            }
        }
    }
}
