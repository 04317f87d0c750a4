//! Deterministic construction of everything a run needs from its config:
//! graph, shared hidden layer, per-agent datasets, and held-out test data.

use nalgebra::DMatrix;

use crate::admm::Mat;
use crate::channel::{build_test_set, build_training_set, ChannelParams, DatasetSpec, TestSet, TrainingSet};
use crate::config::ExperimentConfig;
use crate::elm::{ridge_oracle, HiddenLayer, LocalProblem};
use crate::error::Result;
use crate::graph::DynamicGraph;
use crate::rng::{self, stream};

#[derive(Debug, Clone)]
pub struct Workload {
    pub graph: DynamicGraph,
    pub layer: HiddenLayer,
    pub datasets: Vec<TrainingSet>,
    pub problems: Vec<LocalProblem>,
    pub test: TestSet,
    /// Hidden-layer features of `test.samples`.
    pub test_features: DMatrix<f64>,
    pub n_t: usize,
    pub n_s: usize,
}

/// Region (1-based) whose channel statistics agent `i` observes.
pub fn region_of(agent: usize, n_regions: usize) -> usize {
    agent % n_regions + 1
}

pub fn region_channel(cfg: &ExperimentConfig, region: usize) -> Result<ChannelParams> {
    ChannelParams::for_region(cfg.n_t, cfg.n_r, cfg.paths, region, cfg.n_regions, cfg.region_angle_spread)
}

pub fn agent_dataset(cfg: &ExperimentConfig, agent: usize) -> Result<TrainingSet> {
    let region = region_of(agent, cfg.n_regions);
    let spec = DatasetSpec {
        channel: region_channel(cfg, region)?,
        n_s: cfg.n_s,
        realizations: cfg.realizations,
        copies: cfg.copies,
        region,
    };
    let seed = cfg.data_seed();
    let mut r = rng::seeded(seed, stream::AGENT_DATA + agent as u64);
    build_training_set(&spec, cfg.snr_train_db, seed, &mut r)
}

/// Test data pooled over every region that some agent observes.
pub fn test_set(cfg: &ExperimentConfig, snr_db: f64) -> Result<TestSet> {
    let parts = (1..=cfg.n_regions)
        .map(|l| {
            let mut r = rng::seeded(cfg.data_seed(), stream::TEST_DATA + l as u64);
            build_test_set(&region_channel(cfg, l)?, cfg.n_s, cfg.test_realizations, snr_db, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    TestSet::concat(parts)
}

impl Workload {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = DynamicGraph::new(cfg.n_agents, cfg.topology, cfg.topology_params(), cfg.topology_seed())?;
        let layer = HiddenLayer::init(cfg.hidden_nodes, cfg.input_dim(), cfg.init_seed())?;
        let datasets = (0..cfg.n_agents)
            .map(|i| agent_dataset(cfg, i))
            .collect::<Result<Vec<_>>>()?;
        let problems = datasets
            .iter()
            .map(|d| LocalProblem::new(layer.hidden_matrix(&d.samples)?, d.targets.clone(), cfg.lambda_e))
            .collect::<Result<Vec<_>>>()?;
        let test = test_set(cfg, cfg.snr_test()[0])?;
        let test_features = layer.hidden_matrix(&test.samples)?;
        Ok(Workload {
            graph,
            layer,
            datasets,
            problems,
            test,
            test_features,
            n_t: cfg.n_t,
            n_s: cfg.n_s,
        })
    }

    /// Same training data, different test SNR.
    pub fn with_test_snr(&self, cfg: &ExperimentConfig, snr_db: f64) -> Result<Self> {
        let test = test_set(cfg, snr_db)?;
        let test_features = self.layer.hidden_matrix(&test.samples)?;
        Ok(Workload {
            test,
            test_features,
            ..self.clone()
        })
    }

    /// Centralized minimizer of the summed local losses.
    pub fn oracle(&self) -> Result<Mat> {
        let q = self.layer.width();
        let o = self.problems[0].outputs();
        let rows: usize = self.problems.iter().map(|p| p.rows()).sum();
        let mut w = DMatrix::zeros(rows, q);
        let mut t = DMatrix::zeros(rows, o);
        let mut at = 0;
        for p in &self.problems {
            w.rows_mut(at, p.rows()).copy_from(&p.w);
            t.rows_mut(at, p.rows()).copy_from(&p.t);
            at += p.rows();
        }
        ridge_oracle(&w, &t, self.problems[0].lambda_e, self.problems.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Algorithm;

    fn small_cfg() -> ExperimentConfig {
        let mut c = ExperimentConfig::with_defaults(Algorithm::Ispw, 4);
        c.n_agents = 4;
        c.hidden_nodes = 20;
        c.test_realizations = 10;
        c
    }

    #[test]
    fn build_is_deterministic() {
        let c = small_cfg();
        let a = Workload::build(&c).unwrap();
        let b = Workload::build(&c).unwrap();
        assert_eq!(a.datasets, b.datasets);
        assert_eq!(a.layer, b.layer);
        assert_eq!(a.test.samples, b.test.samples);
    }

    #[test]
    fn shapes_follow_config() {
        let c = small_cfg();
        let w = Workload::build(&c).unwrap();
        assert_eq!(w.problems.len(), 4);
        assert_eq!(w.problems[0].w.shape(), (30, 20));
        assert_eq!(w.problems[0].t.shape(), (30, 32));
        assert_eq!(w.test.len(), 20);
        assert_eq!(w.test_features.shape(), (20, 20));
        assert_eq!(w.datasets[1].header.region, 2);
        assert_eq!(w.datasets[2].header.region, 1);
    }

    #[test]
    fn oracle_zeroes_summed_gradient() {
        let w = Workload::build(&small_cfg()).unwrap();
        let x = w.oracle().unwrap();
        let mut g = Mat::zeros(x.nrows(), x.ncols());
        for p in &w.problems {
            g += p.gradient(&x).unwrap();
        }
        let scale: f64 = w.problems.iter().map(|p| p.wt_t.norm()).sum();
        assert!(g.norm() / scale < 1e-8, "{}", g.norm() / scale);
    }
}
