//! Independent reference computations and the invariant suite behind the
//! `validate` command.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::admm::{AgentState, HyperParams, Mat};
use crate::beamforming::{optimal_fd_beamformer, orthonormalize_columns, spectral_efficiency, C64, CMat};
use crate::config::ExperimentConfig;
use crate::elm::{gradient, loss, stochastic_gradient};
use crate::engine::Simulation;
use crate::error::Result;
use crate::rng::{self, Rng};

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn complex_normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) / 2f64.sqrt()
    })
}

/// Haar-like random matrix with orthonormal columns.
pub fn random_orthonormal(n_t: usize, n_s: usize, rng: &mut Rng) -> CMat {
    orthonormalize_columns(&complex_normal_matrix(n_t, n_s, rng))
}

/// Central-difference gradient of the local loss, entry by entry.
pub fn finite_difference_gradient(x: &Mat, w: &DMatrix<f64>, t: &DMatrix<f64>, lambda_e: f64, step: f64) -> Result<Mat> {
    let mut g = Mat::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let up = loss(&probe, w, t, lambda_e)?;
        probe[idx] = orig - step;
        let down = loss(&probe, w, t, lambda_e)?;
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * step);
    }
    Ok(g)
}

/// Value of the linearized proximal surrogate minimized by the primal step.
pub fn surrogate_value(x: &Mat, state: &AgentState, z: &Mat, hp: &HyperParams) -> f64 {
    let dx = x - &state.x;
    let lin = state.mu.dot(&dx);
    let aug = (z - x + &state.y / hp.rho).norm_squared() * hp.rho / 2.0;
    let prox = dx.norm_squared() * hp.tau / 2.0;
    lin + aug + prox
}

/// Numerical minimizer of [`surrogate_value`]: gradient descent driven by
/// central differences of the surrogate itself.
pub fn minimize_surrogate(state: &AgentState, z: &Mat, hp: &HyperParams, iterations: usize) -> Mat {
    let h = 1e-3;
    let step = 0.5 / (hp.rho + hp.tau);
    let mut x = state.x.clone();
    for _ in 0..iterations {
        let mut g = Mat::zeros(x.nrows(), x.ncols());
        let mut p = x.clone();
        for idx in 0..x.len() {
            let orig = p[idx];
            p[idx] = orig + h;
            let up = surrogate_value(&p, state, z, hp);
            p[idx] = orig - h;
            let down = surrogate_value(&p, state, z, hp);
            p[idx] = orig;
            g[idx] = (up - down) / (2.0 * h);
        }
        x -= g * step;
    }
    x
}

/// Mean of the stochastic gradient over the batches of an equal-size
/// partition of the rows.
pub fn partition_average_gradient(x: &Mat, w: &DMatrix<f64>, t: &DMatrix<f64>, lambda_e: f64, parts: usize) -> Result<Mat> {
    let d = w.nrows();
    let size = d / parts;
    let mut acc = Mat::zeros(x.nrows(), x.ncols());
    for p in 0..parts {
        let batch: Vec<usize> = (p * size..(p + 1) * size).collect();
        acc += stochastic_gradient(x, w, t, lambda_e, &batch)?;
    }
    Ok(acc / parts as f64)
}

pub fn relative_error(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn gradient_check(seed: u64) -> Result<Check> {
    let mut r = rng::seeded(seed, 1);
    let mut worst = 0.0f64;
    let mut worst_partition = 0.0f64;
    for _ in 0..20 {
        let (d, q, o) = (6, 4, 3);
        let w = normal_matrix(d, q, &mut r);
        let t = normal_matrix(d, o, &mut r);
        let x = normal_matrix(q, o, &mut r);
        let lambda = 10f64.powf(r.random_range(-1.0..1.0));
        let g = gradient(&x, &w, &t, lambda)?;
        let fd = finite_difference_gradient(&x, &w, &t, lambda, 1e-6)?;
        worst = worst.max(relative_error(&fd, &g));
        let avg = partition_average_gradient(&x, &w, &t, lambda, 3)?;
        worst_partition = worst_partition.max(relative_error(&avg, &g));
    }
    Ok(check(
        "gradient",
        worst < 1e-5 && worst_partition < 1e-10,
        format!("finite-difference rel err {worst:.2e}, partition rel err {worst_partition:.2e}"),
    ))
}

fn surrogate_check(seed: u64) -> Result<Check> {
    let mut r = rng::seeded(seed, 2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let hp = HyperParams {
            rho: r.random_range(0.1..5.0),
            tau: r.random_range(0.1..20.0),
            ..HyperParams::default()
        };
        let mut s = AgentState::zeros(0, 3, 2);
        s.x = normal_matrix(3, 2, &mut r);
        s.y = normal_matrix(3, 2, &mut r);
        s.mu = normal_matrix(3, 2, &mut r);
        let z = normal_matrix(3, 2, &mut r);
        let closed = crate::admm::primal_update(&s, &z, &hp);
        let numeric = minimize_surrogate(&s, &z, &hp, 200);
        worst = worst.max((closed - numeric).amax());
    }
    Ok(check("surrogate", worst < 1e-8, format!("max abs gap {worst:.2e}")))
}

fn beamformer_check(seed: u64) -> Result<Check> {
    let mut r = rng::seeded(seed, 3);
    let mut violations = 0;
    for k in 0..20 {
        let n_r = 1 + k % 2;
        let h = complex_normal_matrix(n_r, 16, &mut r);
        let f = optimal_fd_beamformer(&h, 1)?;
        let rand_f = random_orthonormal(16, 1, &mut r);
        if spectral_efficiency(&h, &f, 100.0)? + 1e-12 < spectral_efficiency(&h, &rand_f, 100.0)? {
            violations += 1;
        }
    }
    Ok(check("beamformer", violations == 0, format!("{violations} instances beaten by a random beamformer")))
}

fn run_checks(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let mut short = cfg.clone();
    short.max_services = cfg.max_services.min(500);
    let mut a = Simulation::new(&short)?;
    a.run()?;
    let gap = a.max_identity_gap();
    let mut out = Vec::new();
    if short.algorithm.is_walk() {
        let scale = a.model()?.amax();
        out.push(check(
            "token-sum identity",
            gap <= crate::engine::IDENTITY_TOLERANCE * (1.0 + scale),
            format!("max gap {gap:.2e}"),
        ));
    }
    let mut b = Simulation::new(&short)?;
    b.run()?;
    out.push(check(
        "determinism",
        a.records() == b.records(),
        format!("{} records", a.records().len()),
    ));
    let mut c = Simulation::new(&short)?;
    c.run_until_services(short.max_services / 2)?;
    let mut resumed = Simulation::from_checkpoint_bytes(&c.checkpoint_bytes())?;
    resumed.run()?;
    out.push(check(
        "checkpoint resume",
        resumed.records() == a.records(),
        format!("resumed after {} services", c.services()),
    ));
    Ok(out)
}

/// Runs the invariant suite. Model-level checks use `cfg.seed`; run-level
/// checks use a shortened copy of `cfg`.
pub fn invariant_suite(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    let mut out = vec![gradient_check(cfg.seed)?, surrogate_check(cfg.seed)?, beamformer_check(cfg.seed)?];
    out.extend(run_checks(cfg)?);
    Ok(out)
}
