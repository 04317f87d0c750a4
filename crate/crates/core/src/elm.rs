//! Extreme learning machine: frozen random sigmoid features plus a
//! ridge-regularized linear readout.
//!
//! Output weights are `Q × O` matrices. Every column is an independent
//! regression problem sharing the same hidden matrix `W`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

pub type ModelWeights = DMatrix<f64>;

const SIGMOID_CLAMP: f64 = 40.0;

/// Random input weights `a` (`Q × input_dim`) and biases `b` (`Q`), shared by
/// every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub seed: u64,
}

impl HiddenLayer {
    /// `a ~ U[-1, 1]`, `b ~ U[0, 1]`.
    pub fn init(q: usize, input_dim: usize, seed: u64) -> Result<Self> {
        if q == 0 || input_dim == 0 {
            return Err(Error::arg("hidden width and input width must be positive"));
        }
        let mut r = rng::seeded(seed, rng::stream::HIDDEN);
        // filled row by row so the draw order does not depend on storage order
        let mut a = DMatrix::zeros(q, input_dim);
        for i in 0..q {
            for j in 0..input_dim {
                a[(i, j)] = r.random_range(-1.0..=1.0);
            }
        }
        let b = DVector::from_fn(q, |_, _| r.random_range(0.0..=1.0));
        Ok(HiddenLayer { a, b, seed })
    }

    pub fn width(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn feature_map(&self, s: &[f64]) -> Result<DVector<f64>> {
        if s.len() != self.input_dim() {
            return Err(Error::arg(format!(
                "sample width {} does not match input width {}",
                s.len(),
                self.input_dim()
            )));
        }
        let s = DVector::from_column_slice(s);
        let pre = &self.a * s + &self.b;
        Ok(pre.map(sigmoid))
    }

    /// `W` with row `d` equal to the feature map of sample row `d`.
    pub fn hidden_matrix(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if samples.ncols() != self.input_dim() {
            return Err(Error::arg(format!(
                "sample width {} does not match input width {}",
                samples.ncols(),
                self.input_dim()
            )));
        }
        let mut pre = samples * self.a.transpose();
        for mut row in pre.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b.iter()) {
                *v = sigmoid(*v + b);
            }
        }
        Ok(pre)
    }

    /// ELM output `G(s) · x` for one sample.
    pub fn predict(&self, x: &ModelWeights, s: &[f64]) -> Result<DVector<f64>> {
        if x.nrows() != self.width() {
            return Err(Error::arg(format!(
                "weights have {} rows, hidden layer has {} nodes",
                x.nrows(),
                self.width()
            )));
        }
        let g = self.feature_map(s)?;
        Ok(x.tr_mul(&g))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP)).exp())
}

fn check_shapes(x: &ModelWeights, w: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<()> {
    if w.ncols() != x.nrows() || w.nrows() != t.nrows() || x.ncols() != t.ncols() {
        return Err(Error::arg(format!(
            "shape mismatch: W {:?}, x {:?}, T {:?}",
            w.shape(),
            x.shape(),
            t.shape()
        )));
    }
    Ok(())
}

fn check_lambda(lambda_e: f64) -> Result<()> {
    if !(lambda_e > 0.0) || !lambda_e.is_finite() {
        return Err(Error::arg(format!("lambda_e must be positive, got {lambda_e}")));
    }
    Ok(())
}

/// `(1/(2λ))‖W x − T‖² + ½‖x‖²`.
pub fn loss(x: &ModelWeights, w: &DMatrix<f64>, t: &DMatrix<f64>, lambda_e: f64) -> Result<f64> {
    check_shapes(x, w, t)?;
    check_lambda(lambda_e)?;
    let r = w * x - t;
    Ok(r.norm_squared() / (2.0 * lambda_e) + 0.5 * x.norm_squared())
}

/// `(1/λ) Wᵀ(W x − T) + x`.
pub fn gradient(x: &ModelWeights, w: &DMatrix<f64>, t: &DMatrix<f64>, lambda_e: f64) -> Result<ModelWeights> {
    check_shapes(x, w, t)?;
    check_lambda(lambda_e)?;
    let r = w * x - t;
    Ok(w.tr_mul(&r) / lambda_e + x)
}

/// Mini-batch estimate `(D/|B|)(1/λ) W_Bᵀ(W_B x − T_B) + x`.
pub fn stochastic_gradient(
    x: &ModelWeights,
    w: &DMatrix<f64>,
    t: &DMatrix<f64>,
    lambda_e: f64,
    batch: &[usize],
) -> Result<ModelWeights> {
    check_shapes(x, w, t)?;
    check_lambda(lambda_e)?;
    if batch.is_empty() {
        return Err(Error::arg("mini-batch must be nonempty"));
    }
    let d = w.nrows();
    if let Some(&bad) = batch.iter().find(|&&i| i >= d) {
        return Err(Error::arg(format!("batch index {bad} out of range 0..{d}")));
    }
    let wb = w.select_rows(batch);
    let tb = t.select_rows(batch);
    let r = &wb * x - tb;
    let scale = d as f64 / batch.len() as f64 / lambda_e;
    Ok(wb.tr_mul(&r) * scale + x)
}

/// Exact minimizer of `Σ_i f_i` over `n_agents` local losses whose hidden
/// matrices and targets are stacked in `w_all`, `t_all`:
/// `(WᵀW + N·λ·I) x = Wᵀ T`.
pub fn ridge_oracle(w_all: &DMatrix<f64>, t_all: &DMatrix<f64>, lambda_e: f64, n_agents: usize) -> Result<ModelWeights> {
    check_lambda(lambda_e)?;
    if w_all.nrows() != t_all.nrows() {
        return Err(Error::arg("stacked W and T have different row counts"));
    }
    if n_agents == 0 {
        return Err(Error::arg("need at least one agent"));
    }
    let q = w_all.ncols();
    let mut a = w_all.tr_mul(w_all);
    for i in 0..q {
        a[(i, i)] += n_agents as f64 * lambda_e;
    }
    let rhs = w_all.tr_mul(t_all);
    let ch = a.cholesky().ok_or_else(|| Error::arg("normal equations not positive definite"))?;
    Ok(ch.solve(&rhs))
}

/// One agent's fixed local problem with the pieces every optimizer reuses.
#[derive(Debug, Clone)]
pub struct LocalProblem {
    pub w: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub lambda_e: f64,
    /// `WᵀW / λ`, for exact local solves.
    pub gram: DMatrix<f64>,
    /// `WᵀT / λ`.
    pub wt_t: DMatrix<f64>,
}

impl LocalProblem {
    pub fn new(w: DMatrix<f64>, t: DMatrix<f64>, lambda_e: f64) -> Result<Self> {
        check_lambda(lambda_e)?;
        if w.nrows() != t.nrows() {
            return Err(Error::arg("W and T have different row counts"));
        }
        let gram = w.tr_mul(&w) / lambda_e;
        let wt_t = w.tr_mul(&t) / lambda_e;
        Ok(LocalProblem {
            w,
            t,
            lambda_e,
            gram,
            wt_t,
        })
    }

    pub fn rows(&self) -> usize {
        self.w.nrows()
    }

    pub fn width(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.t.ncols()
    }

    pub fn loss(&self, x: &ModelWeights) -> Result<f64> {
        loss(x, &self.w, &self.t, self.lambda_e)
    }

    pub fn gradient(&self, x: &ModelWeights) -> Result<ModelWeights> {
        gradient(x, &self.w, &self.t, self.lambda_e)
    }

    pub fn stochastic_gradient(&self, x: &ModelWeights, batch: &[usize]) -> Result<ModelWeights> {
        stochastic_gradient(x, &self.w, &self.t, self.lambda_e, batch)
    }

    /// Solves `(WᵀW/λ + c·I) x = rhs` exactly.
    pub fn solve_shifted(&self, shift: f64, rhs: &ModelWeights) -> Result<ModelWeights> {
        let mut a = self.gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += shift;
        }
        let ch = a
            .cholesky()
            .ok_or_else(|| Error::arg("shifted local system not positive definite"))?;
        Ok(ch.solve(rhs))
    }
}
