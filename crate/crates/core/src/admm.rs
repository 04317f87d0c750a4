//! Inexact stochastic parallel random-walk ADMM.
//!
//! `M` tokens walk the agent graph. When a token arrives at an agent, the
//! agent refreshes its gradient moment, takes a closed-form linearized
//! proximal step, ascends its dual, and folds the change of its
//! contribution `x − y/ρ` into the token it holds. Because all state starts
//! at zero, the token average always equals the network average of those
//! contributions.

use nalgebra::DMatrix;
use rand::seq::index;

use crate::elm::{LocalProblem, ModelWeights};
use crate::error::{Error, Result};
use crate::graph::{sample_next, DynamicGraph};
use crate::rng::Rng;

pub type Mat = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub rho: f64,
    pub tau: f64,
    pub gamma: f64,
    pub eta: f64,
    pub m_walks: usize,
    pub n_agents: usize,
    pub lambda_e: f64,
    pub batch_size: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            rho: 2.0,
            tau: 10.0,
            gamma: 1.0,
            eta: 0.95,
            m_walks: 2,
            n_agents: 10,
            lambda_e: 1e-2,
            batch_size: 8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::arg(what.to_string()));
        if !(self.rho > 0.0) {
            return bad("rho must be > 0");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be > 0");
        }
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return bad("gamma must lie in (0, 2)");
        }
        if !(self.eta >= 0.0 && self.eta < 1.0) {
            return bad("eta must lie in [0, 1)");
        }
        if self.m_walks == 0 || self.n_agents == 0 {
            return bad("need at least one walk and one agent");
        }
        if !(self.lambda_e > 0.0) {
            return bad("lambda_e must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    /// Token increment weight `M/N`.
    pub fn walk_weight(&self) -> f64 {
        self.m_walks as f64 / self.n_agents as f64
    }
}

/// Local optimizer state `(x_i, y_i, μ_i, k_i)` plus the cached contribution
/// `x_i − y_i/ρ` from before the latest update.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub x: Mat,
    pub y: Mat,
    pub mu: Mat,
    pub k: u64,
    pub prev_contribution: Mat,
}

impl AgentState {
    pub fn zeros(id: usize, rows: usize, cols: usize) -> Self {
        AgentState {
            id,
            x: Mat::zeros(rows, cols),
            y: Mat::zeros(rows, cols),
            mu: Mat::zeros(rows, cols),
            k: 0,
            prev_contribution: Mat::zeros(rows, cols),
        }
    }

    pub fn contribution(&self, rho: f64) -> Mat {
        &self.x - &self.y / rho
    }
}

/// A walk's global-model estimate and where it currently sits.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub z: Mat,
    pub walk: usize,
    pub s: u64,
    pub location: usize,
}

impl Token {
    pub fn new(walk: usize, location: usize, rows: usize, cols: usize) -> Self {
        Token {
            z: Mat::zeros(rows, cols),
            walk,
            s: 0,
            location,
        }
    }
}

/// Biased first-order moment `η μ + (1 − η) g` (no bias correction).
pub fn moment_update(mu: &Mat, g: &Mat, eta: f64) -> Mat {
    mu * eta + g * (1.0 - eta)
}

/// Minimizer of `μᵀ(x − x_k) + (ρ/2)‖z − x + y/ρ‖² + (τ/2)‖x − x_k‖²`,
/// i.e. `(ρ z + y + τ x_k − μ) / (ρ + τ)`.
pub fn primal_update(state: &AgentState, z: &Mat, hp: &HyperParams) -> Mat {
    (z * hp.rho + &state.y + &state.x * hp.tau - &state.mu) / (hp.rho + hp.tau)
}

/// `y + γ ρ (z − x_new)`.
pub fn dual_update(y: &Mat, z: &Mat, x_new: &Mat, hp: &HyperParams) -> Mat {
    y + (z - x_new) * (hp.gamma * hp.rho)
}

/// Returns the updated token payload and the agent's new contribution.
pub fn token_update(z: &Mat, prev_contribution: &Mat, x_new: &Mat, y_new: &Mat, hp: &HyperParams) -> (Mat, Mat) {
    let contribution = x_new - y_new / hp.rho;
    let z_new = z + (&contribution - prev_contribution) * hp.walk_weight();
    (z_new, contribution)
}

/// Uniform mini-batch without replacement, sorted. A batch at least as large
/// as the data set is the full, ordered index range.
pub fn draw_batch(rows: usize, batch_size: usize, rng: &mut Rng) -> Vec<usize> {
    if batch_size >= rows {
        return (0..rows).collect();
    }
    let mut b = index::sample(rng, rows, batch_size).into_vec();
    b.sort_unstable();
    b
}

/// Commits a service: dual, token, and clock bookkeeping shared by every
/// walk-based method once the new primal iterate is known.
pub(crate) fn finish_service(agent: &mut AgentState, token: &mut Token, x_new: Mat, hp: &HyperParams) {
    let y_new = dual_update(&agent.y, &token.z, &x_new, hp);
    let (z_new, contribution) = token_update(&token.z, &agent.prev_contribution, &x_new, &y_new, hp);
    agent.x = x_new;
    agent.y = y_new;
    agent.prev_contribution = contribution;
    agent.k += 1;
    token.z = z_new;
}

/// One pass of the per-arrival update at `agent` for `token`.
///
/// Order: draw batch, stochastic gradient at the current iterate, moment,
/// primal, dual, token, clock.
pub fn service_token(
    agent: &mut AgentState,
    token: &mut Token,
    problem: &LocalProblem,
    hp: &HyperParams,
    rng: &mut Rng,
) -> Result<()> {
    if token.location != agent.id {
        return Err(Error::arg(format!(
            "token {} is at agent {}, not {}",
            token.walk, token.location, agent.id
        )));
    }
    let batch = draw_batch(problem.rows(), hp.batch_size, rng);
    let g = problem.stochastic_gradient(&agent.x, &batch)?;
    agent.mu = moment_update(&agent.mu, &g, hp.eta);
    let x_new = primal_update(agent, &token.z, hp);
    finish_service(agent, token, x_new, hp);
    Ok(())
}

/// Where a hop went. `from == to` is a self-hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub from: usize,
    pub to: usize,
}

impl Hop {
    pub fn is_self(&self) -> bool {
        self.from == self.to
    }
}

/// Moves the token one step along its walk using the transition rule at `t`.
pub fn hop_token(token: &mut Token, graph: &DynamicGraph, t: f64, rng: &mut Rng) -> Result<Hop> {
    let from = token.location;
    let d = graph.transition(from, t)?;
    let to = sample_next(&d, rng);
    token.location = to;
    token.s += 1;
    Ok(Hop { from, to })
}

/// Mean of all token payloads, the algorithm's global model.
pub fn consensus_model(tokens: &[Token]) -> Result<ModelWeights> {
    let first = tokens.first().ok_or_else(|| Error::arg("need at least one token"))?;
    let mut acc = Mat::zeros(first.z.nrows(), first.z.ncols());
    for t in tokens {
        acc += &t.z;
    }
    Ok(acc / tokens.len() as f64)
}

/// `(1/N) Σ_i (x_i − y_i/ρ)` recomputed from scratch.
pub fn network_average(agents: &[AgentState], rho: f64) -> Result<Mat> {
    let first = agents.first().ok_or_else(|| Error::arg("need at least one agent"))?;
    let mut acc = Mat::zeros(first.x.nrows(), first.x.ncols());
    for a in agents {
        acc += a.contribution(rho);
    }
    Ok(acc / agents.len() as f64)
}

/// Max-abs gap between the token average and the network average.
pub fn token_sum_gap(tokens: &[Token], agents: &[AgentState], rho: f64) -> Result<f64> {
    let diff = consensus_model(tokens)? - network_average(agents, rho)?;
    Ok(diff.amax())
}
