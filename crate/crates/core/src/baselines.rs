//! Reference optimizers on the same local losses: exact random-walk ADMM
//! (single and parallel walks), decentralized gradient descent with
//! Metropolis mixing, and edge-based decentralized ADMM. Also the
//! non-learning SVD beamformer references.

use std::collections::HashMap;

use nalgebra::{Cholesky, Dyn};

use crate::admm::{finish_service, AgentState, HyperParams, Mat, Token};
use crate::beamforming::{optimal_fd_beamformer, spectral_efficiency, CMat};
use crate::elm::LocalProblem;
use crate::error::{Error, Result};

type Factor = Cholesky<f64, Dyn>;

fn factor(problem: &LocalProblem, shift: f64) -> Result<Factor> {
    let mut a = problem.gram.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += shift;
    }
    a.cholesky()
        .ok_or_else(|| Error::arg("local system is not positive definite"))
}

/// Exact x-step for W-ADMM / PW-ADMM:
/// `argmin_x f_i(x) − ⟨y, x⟩ + (ρ/2)‖z − x‖²`, solved through a cached
/// factorization of `WᵀW/λ + (1 + ρ) I` per agent.
#[derive(Debug, Clone)]
pub struct ExactWalkSolver {
    factors: Vec<Factor>,
}

impl ExactWalkSolver {
    pub fn new(problems: &[LocalProblem], hp: &HyperParams) -> Result<Self> {
        let factors = problems
            .iter()
            .map(|p| factor(p, 1.0 + hp.rho))
            .collect::<Result<_>>()?;
        Ok(ExactWalkSolver { factors })
    }

    pub fn primal(&self, agent: &AgentState, z: &Mat, problem: &LocalProblem, hp: &HyperParams) -> Mat {
        let rhs = &problem.wt_t + &agent.y + z * hp.rho;
        self.factors[agent.id].solve(&rhs)
    }

    /// One W-ADMM (M = 1) or PW-ADMM service. Deterministic.
    pub fn service(&self, agent: &mut AgentState, token: &mut Token, problem: &LocalProblem, hp: &HyperParams) -> Result<()> {
        if token.location != agent.id {
            return Err(Error::arg(format!(
                "token {} is at agent {}, not {}",
                token.walk, token.location, agent.id
            )));
        }
        let x_new = self.primal(agent, &token.z, problem, hp);
        finish_service(agent, token, x_new, hp);
        Ok(())
    }
}

/// Metropolis–Hastings mixing weights for adjacency lists `adj`.
pub fn metropolis_weights(adj: &[Vec<usize>]) -> Mat {
    let n = adj.len();
    let mut w = Mat::zeros(n, n);
    for i in 0..n {
        for &j in &adj[i] {
            w[(i, j)] = 1.0 / (1.0 + adj[i].len().max(adj[j].len()) as f64);
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// One synchronous DGD round: `x_i ← Σ_j w_ij x_j − α ∇f_i(x_i)`.
pub fn dgd_round(xs: &mut [Mat], problems: &[LocalProblem], adj: &[Vec<usize>], alpha: f64) -> Result<()> {
    if xs.len() != problems.len() || xs.len() != adj.len() {
        return Err(Error::arg("agent count mismatch in DGD round"));
    }
    let w = metropolis_weights(adj);
    let grads: Vec<Mat> = xs
        .iter()
        .zip(problems)
        .map(|(x, p)| p.gradient(x))
        .collect::<Result<_>>()?;
    let old: Vec<Mat> = xs.to_vec();
    for (i, x) in xs.iter_mut().enumerate() {
        let mut acc = &old[i] * w[(i, i)];
        for &j in &adj[i] {
            acc += &old[j] * w[(i, j)];
        }
        *x = acc - &grads[i] * alpha;
    }
    Ok(())
}

/// Decentralized consensus ADMM over graph edges.
#[derive(Debug, Clone)]
pub struct Dadmm {
    pub rho: f64,
    pub x: Vec<Mat>,
    pub p: Vec<Mat>,
    factors: HashMap<(usize, usize), Factor>,
}

impl Dadmm {
    pub fn new(n_agents: usize, rows: usize, cols: usize, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::arg("D-ADMM rho must be > 0"));
        }
        Ok(Dadmm {
            rho,
            x: vec![Mat::zeros(rows, cols); n_agents],
            p: vec![Mat::zeros(rows, cols); n_agents],
            factors: HashMap::new(),
        })
    }

    /// Synchronous round on the snapshot `adj`:
    /// `x_i ← argmin f_i(x) + ⟨p_i, x⟩ + ρ Σ_{j∈N_i} ‖x − (x_i + x_j)/2‖²`,
    /// then `p_i ← p_i + ρ Σ_{j∈N_i} (x_i − x_j)`.
    pub fn round(&mut self, problems: &[LocalProblem], adj: &[Vec<usize>]) -> Result<()> {
        let n = self.x.len();
        if problems.len() != n || adj.len() != n {
            return Err(Error::arg("agent count mismatch in D-ADMM round"));
        }
        let rho = self.rho;
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let deg = adj[i].len();
            let key = (i, deg);
            if !self.factors.contains_key(&key) {
                let f = factor(&problems[i], 1.0 + 2.0 * rho * deg as f64)?;
                self.factors.insert(key, f);
            }
            let mut nb = &self.x[i] * deg as f64;
            for &j in &adj[i] {
                nb += &self.x[j];
            }
            let rhs = &problems[i].wt_t - &self.p[i] + nb * rho;
            next.push(self.factors[&key].solve(&rhs));
        }
        self.x = next;
        for i in 0..n {
            let mut s = Mat::zeros(self.x[i].nrows(), self.x[i].ncols());
            for &j in &adj[i] {
                s += &self.x[i] - &self.x[j];
            }
            self.p[i] += s * rho;
        }
        Ok(())
    }
}

/// Mean of per-agent iterates.
pub fn average(xs: &[Mat]) -> Result<Mat> {
    let first = xs.first().ok_or_else(|| Error::arg("no iterates"))?;
    let mut acc = Mat::zeros(first.nrows(), first.ncols());
    for x in xs {
        acc += x;
    }
    Ok(acc / xs.len() as f64)
}

/// Rates of the SVD beamformer designed on the true channel and on its noisy
/// observation, both evaluated on the true channel.
pub fn fd_reference(h_clean: &CMat, h_noisy: &CMat, n_s: usize, rho_r: f64) -> Result<(f64, f64)> {
    if h_clean.shape() != h_noisy.shape() {
        return Err(Error::arg("clean and noisy channels differ in shape"));
    }
    let perfect = spectral_efficiency(h_clean, &optimal_fd_beamformer(h_clean, n_s)?, rho_r)?;
    let imperfect = spectral_efficiency(h_clean, &optimal_fd_beamformer(h_noisy, n_s)?, rho_r)?;
    Ok((perfect, imperfect))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::token_sum_gap;
    use crate::beamforming::C64;
    use crate::rng::seeded;
    use rand::Rng as _;

    fn problem(seed: u64, rows: usize, q: usize) -> LocalProblem {
        let mut r = seeded(seed, 0);
        let w = Mat::from_fn(rows, q, |_, _| r.random::<f64>());
        let t = Mat::from_fn(rows, 2, |_, _| r.random::<f64>() - 0.5);
        LocalProblem::new(w, t, 0.5).unwrap()
    }

    #[test]
    fn exact_step_is_stationary() {
        let hp = HyperParams {
            n_agents: 1,
            m_walks: 1,
            ..HyperParams::default()
        };
        let p = problem(1, 6, 4);
        let solver = ExactWalkSolver::new(std::slice::from_ref(&p), &hp).unwrap();
        let mut a = AgentState::zeros(0, 4, 2);
        a.y = Mat::from_fn(4, 2, |i, j| (i + j) as f64 * 0.1);
        let z = Mat::from_fn(4, 2, |i, j| (i as f64 - j as f64) * 0.3);
        let x = solver.primal(&a, &z, &p, &hp);
        // ∇f(x) − y − ρ(z − x) = 0
        let r = p.gradient(&x).unwrap() - &a.y - (&z - &x) * hp.rho;
        assert!(r.amax() < 1e-10);
    }

    #[test]
    fn metropolis_is_doubly_stochastic() {
        let adj = vec![vec![1, 2], vec![0], vec![0, 3], vec![2]];
        let w = metropolis_weights(&adj);
        for i in 0..4 {
            assert!((w.row(i).sum() - 1.0).abs() < 1e-15);
            for j in 0..4 {
                assert_eq!(w[(i, j)], w[(j, i)]);
                assert!(w[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn dgd_two_agent_average() {
        let zero_w = LocalProblem::new(Mat::zeros(1, 1), Mat::zeros(1, 1), 1.0).unwrap();
        // with W = 0, T = 0 the gradient is x itself, so use alpha = 0 for pure averaging
        let mut xs = vec![Mat::from_element(1, 1, 0.0), Mat::from_element(1, 1, 2.0)];
        let adj = vec![vec![1], vec![0]];
        dgd_round(&mut xs, &[zero_w.clone(), zero_w], &adj, 0.0).unwrap();
        assert_eq!(xs[0][(0, 0)], 1.0);
        assert_eq!(xs[1][(0, 0)], 1.0);
    }

    #[test]
    fn dgd_fixed_point_when_equal_and_stationary() {
        let p = problem(2, 5, 3);
        let xstar = crate::elm::ridge_oracle(&p.w, &p.t, p.lambda_e, 1).unwrap();
        let mut xs = vec![xstar.clone(); 3];
        let adj = vec![vec![1, 2], vec![0, 2], vec![0, 1]];
        dgd_round(&mut xs, &[p.clone(), p.clone(), p], &adj, 0.01).unwrap();
        for x in &xs {
            assert!((x - &xstar).amax() < 1e-12);
        }
    }

    #[test]
    fn dadmm_duals_sum_to_zero_and_identical_data_stays_in_consensus() {
        let p = problem(3, 6, 4);
        let problems = vec![p.clone(), p.clone(), p.clone(), p];
        let adj = vec![vec![1, 2, 3], vec![0, 2, 3], vec![0, 1, 3], vec![0, 1, 2]];
        let mut d = Dadmm::new(4, 4, 2, 2.0).unwrap();
        for _ in 0..20 {
            d.round(&problems, &adj).unwrap();
            for i in 1..4 {
                assert!((&d.x[i] - &d.x[0]).amax() < 1e-12);
            }
            let psum: Mat = d.p.iter().fold(Mat::zeros(4, 2), |acc, p| acc + p);
            assert!(psum.amax() < 1e-12);
        }
    }

    #[test]
    fn dadmm_dual_antisymmetry_on_sparse_graph() {
        let problems: Vec<_> = (0..4).map(|s| problem(s, 5, 3)).collect();
        let adj = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        let mut d = Dadmm::new(4, 3, 2, 2.0).unwrap();
        for _ in 0..50 {
            d.round(&problems, &adj).unwrap();
            let psum: Mat = d.p.iter().fold(Mat::zeros(3, 2), |acc, p| acc + p);
            assert!(psum.amax() < 1e-10);
        }
    }

    #[test]
    fn walk_identity_holds_for_exact_updates() {
        let hp = HyperParams {
            n_agents: 3,
            m_walks: 1,
            ..HyperParams::default()
        };
        let problems: Vec<_> = (0..3).map(|s| problem(s, 4, 3)).collect();
        let solver = ExactWalkSolver::new(&problems, &hp).unwrap();
        let mut agents: Vec<_> = (0..3).map(|i| AgentState::zeros(i, 3, 2)).collect();
        let mut tok = vec![Token::new(0, 0, 3, 2)];
        for step in 0..30 {
            let a = step % 3;
            tok[0].location = a;
            solver.service(&mut agents[a], &mut tok[0], &problems[a], &hp).unwrap();
            assert!(token_sum_gap(&tok, &agents, hp.rho).unwrap() < 1e-12);
        }
    }

    #[test]
    fn fd_reference_examples() {
        let mut r = seeded(5, 0);
        let h = CMat::from_fn(1, 8, |_, _| C64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5));
        let (p, i) = fd_reference(&h, &h, 1, 100.0).unwrap();
        assert_eq!(p, i);
        let noisy = h.map(|v| v + C64::new(0.3 * (r.random::<f64>() - 0.5), 0.0));
        let (p2, i2) = fd_reference(&h, &noisy, 1, 100.0).unwrap();
        assert_eq!(p2, p);
        assert!(p2 >= i2);
        assert!(fd_reference(&h, &CMat::zeros(2, 8), 1, 1.0).is_err());
    }
}
