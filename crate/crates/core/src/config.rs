//! Experiment configuration: a TOML file whose keys are the field names
//! below. Everything except `algorithm` and `seed` has a default; the
//! defaults reproduce the reference parameter set.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::admm::HyperParams;
use crate::error::{Error, Result};
use crate::graph::{TopologyKind, TopologyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ispw,
    Wadmm,
    Pwadmm,
    Dgd,
    Dadmm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Ispw,
        Algorithm::Wadmm,
        Algorithm::Pwadmm,
        Algorithm::Dgd,
        Algorithm::Dadmm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ispw => "ispw",
            Algorithm::Wadmm => "wadmm",
            Algorithm::Pwadmm => "pwadmm",
            Algorithm::Dgd => "dgd",
            Algorithm::Dadmm => "dadmm",
        }
    }

    pub fn is_walk(self) -> bool {
        matches!(self, Algorithm::Ispw | Algorithm::Wadmm | Algorithm::Pwadmm)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("algorithm", format!("unknown algorithm `{s}` (expected ispw, wadmm, pwadmm, dgd or dadmm)")))
    }
}

pub const REQUIRED_KEYS: [&str; 2] = ["algorithm", "seed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seed: u64,

    #[serde(rename = "N", default = "d::n_agents")]
    pub n_agents: usize,
    #[serde(rename = "M", default = "d::m_walks")]
    pub m_walks: usize,
    #[serde(rename = "L", default = "d::n_regions")]
    pub n_regions: usize,
    #[serde(rename = "N_t", default = "d::n_t")]
    pub n_t: usize,
    #[serde(rename = "N_r", default = "d::one")]
    pub n_r: usize,
    #[serde(rename = "N_s", default = "d::one")]
    pub n_s: usize,
    #[serde(rename = "R_i", default = "d::realizations")]
    pub realizations: usize,
    #[serde(rename = "C_i", default = "d::copies")]
    pub copies: usize,
    #[serde(rename = "Q", default = "d::hidden")]
    pub hidden_nodes: usize,

    #[serde(default = "d::lambda_e")]
    pub lambda_e: f64,
    #[serde(default = "d::eta")]
    pub eta: f64,
    #[serde(default = "d::rho")]
    pub rho: f64,
    #[serde(default = "d::gamma")]
    pub gamma: f64,
    #[serde(default = "d::tau")]
    pub tau: f64,
    #[serde(default = "d::alpha_dgd")]
    pub alpha_dgd: f64,
    #[serde(default = "d::rho")]
    pub rho_dadmm: f64,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,

    #[serde(default = "d::snr")]
    pub snr_train_db: f64,
    /// Test SNRs; empty means "same as training".
    #[serde(default)]
    pub snr_test_db: Vec<f64>,
    #[serde(default = "d::rho_r_db")]
    pub rho_r_db: f64,

    #[serde(default = "d::paths")]
    pub paths: usize,
    #[serde(default = "d::angle_spread")]
    pub region_angle_spread: f64,
    #[serde(default = "d::test_realizations")]
    pub test_realizations: usize,

    #[serde(default = "d::topology")]
    pub topology: TopologyKind,
    #[serde(default = "d::area_side")]
    pub area_side: f64,
    #[serde(default = "d::comm_radius")]
    pub comm_radius: f64,
    #[serde(default = "d::agent_speed")]
    pub agent_speed: f64,
    #[serde(default = "d::waypoint_dwell")]
    pub waypoint_dwell: f64,
    #[serde(default = "d::yes")]
    pub require_connected: bool,

    #[serde(default = "d::compute_time")]
    pub compute_time: f64,
    #[serde(default = "d::hop_latency")]
    pub hop_latency: f64,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk_seed: Option<u64>,

    #[serde(default = "d::max_services")]
    pub max_services: u64,
    #[serde(default = "d::max_time")]
    pub max_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_nmse: Option<f64>,
    /// Services between metric snapshots; defaults to `N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_interval: Option<u64>,
}

mod d {
    use crate::graph::TopologyKind;

    pub fn n_agents() -> usize {
        10
    }
    pub fn m_walks() -> usize {
        2
    }
    pub fn n_regions() -> usize {
        2
    }
    pub fn n_t() -> usize {
        16
    }
    pub fn one() -> usize {
        1
    }
    pub fn realizations() -> usize {
        10
    }
    pub fn copies() -> usize {
        3
    }
    pub fn hidden() -> usize {
        200
    }
    pub fn lambda_e() -> f64 {
        1e-2
    }
    pub fn eta() -> f64 {
        0.95
    }
    pub fn rho() -> f64 {
        2.0
    }
    pub fn gamma() -> f64 {
        1.0
    }
    pub fn tau() -> f64 {
        10.0
    }
    pub fn alpha_dgd() -> f64 {
        1e-2
    }
    pub fn batch_size() -> usize {
        8
    }
    pub fn snr() -> f64 {
        10.0
    }
    pub fn rho_r_db() -> f64 {
        20.0
    }
    pub fn paths() -> usize {
        4
    }
    pub fn angle_spread() -> f64 {
        0.02
    }
    pub fn test_realizations() -> usize {
        200
    }
    pub fn topology() -> TopologyKind {
        TopologyKind::MobilityWaypoint
    }
    pub fn area_side() -> f64 {
        1.0
    }
    pub fn comm_radius() -> f64 {
        0.5
    }
    pub fn agent_speed() -> f64 {
        0.01
    }
    pub fn waypoint_dwell() -> f64 {
        5.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn compute_time() -> f64 {
        1.0
    }
    pub fn hop_latency() -> f64 {
        0.1
    }
    pub fn max_services() -> u64 {
        20_000
    }
    pub fn max_time() -> f64 {
        f64::INFINITY
    }
}

impl ExperimentConfig {
    /// Defaults for everything but the two required keys.
    pub fn with_defaults(algorithm: Algorithm, seed: u64) -> Self {
        let src = format!("algorithm = \"{}\"\nseed = {}\n", algorithm.name(), seed);
        Self::from_toml_str(&src).expect("defaults are valid")
    }

    pub fn from_toml_str(src: &str) -> Result<Self> {
        let table: toml::Table = src
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        let missing: Vec<&str> = REQUIRED_KEYS.iter().copied().filter(|k| !table.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(Error::config(
                missing.join(", "),
                format!("missing required field(s); required: {}", REQUIRED_KEYS.join(", ")),
            ));
        }
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<file>".to_string());
            Error::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_str(&src)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        fn pos_int(field: &str, v: usize) -> Result<()> {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
            Ok(())
        }
        fn pos(field: &str, v: f64) -> Result<()> {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::config(field, format!("must be > 0, got {v}")));
            }
            Ok(())
        }
        fn nonneg_finite(field: &str, v: f64) -> Result<()> {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, format!("must be finite and >= 0, got {v}")));
            }
            Ok(())
        }
        pos_int("N", self.n_agents)?;
        pos_int("M", self.m_walks)?;
        pos_int("L", self.n_regions)?;
        pos_int("N_t", self.n_t)?;
        pos_int("N_r", self.n_r)?;
        pos_int("R_i", self.realizations)?;
        pos_int("C_i", self.copies)?;
        pos_int("Q", self.hidden_nodes)?;
        pos_int("batch_size", self.batch_size)?;
        pos_int("paths", self.paths)?;
        pos_int("test_realizations", self.test_realizations)?;
        if self.n_s == 0 || self.n_s > self.n_t.min(self.n_r) {
            return Err(Error::config("N_s", format!("must lie in 1..=min(N_t, N_r) = {}", self.n_t.min(self.n_r))));
        }
        if self.n_regions > self.n_agents {
            return Err(Error::config("L", "cannot exceed the number of agents N"));
        }
        pos("lambda_e", self.lambda_e)?;
        pos("rho", self.rho)?;
        pos("tau", self.tau)?;
        pos("alpha_dgd", self.alpha_dgd)?;
        pos("rho_dadmm", self.rho_dadmm)?;
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return Err(Error::config("gamma", format!("must lie in (0, 2), got {}", self.gamma)));
        }
        if !(self.eta >= 0.0 && self.eta < 1.0) {
            return Err(Error::config("eta", format!("must lie in [0, 1), got {}", self.eta)));
        }
        for (field, v) in std::iter::once(("snr_train_db", self.snr_train_db))
            .chain(self.snr_test_db.iter().map(|v| ("snr_test_db", *v)))
        {
            if v.is_nan() || v == f64::NEG_INFINITY {
                return Err(Error::config(field, "must be a real number or +inf"));
            }
        }
        if !self.rho_r_db.is_finite() {
            return Err(Error::config("rho_r_db", "must be finite"));
        }
        if !(self.region_angle_spread >= 0.0) || self.region_angle_spread > std::f64::consts::TAU {
            return Err(Error::config("region_angle_spread", "must lie in [0, 2π]"));
        }
        if self.topology != TopologyKind::StaticComplete {
            pos("area_side", self.area_side)?;
            nonneg_finite("comm_radius", self.comm_radius)?;
        }
        if self.topology == TopologyKind::MobilityWaypoint {
            pos("agent_speed", self.agent_speed)?;
            nonneg_finite("waypoint_dwell", self.waypoint_dwell)?;
        }
        nonneg_finite("compute_time", self.compute_time)?;
        nonneg_finite("hop_latency", self.hop_latency)?;
        if self.compute_time + self.hop_latency == 0.0 {
            return Err(Error::config("hop_latency", "compute_time and hop_latency cannot both be 0"));
        }
        if self.max_services == 0 {
            return Err(Error::config("max_services", "must be >= 1"));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::config("max_time", "must be > 0"));
        }
        if let Some(t) = self.target_nmse {
            nonneg_finite("target_nmse", t)?;
        }
        if self.metrics_interval == Some(0) {
            return Err(Error::config("metrics_interval", "must be >= 1"));
        }
        Ok(())
    }

    /// Walk count actually used: W-ADMM always runs a single walk.
    pub fn effective_walks(&self) -> usize {
        match self.algorithm {
            Algorithm::Wadmm => 1,
            _ => self.m_walks,
        }
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            rho: self.rho,
            tau: self.tau,
            gamma: self.gamma,
            eta: self.eta,
            m_walks: self.effective_walks(),
            n_agents: self.n_agents,
            lambda_e: self.lambda_e,
            batch_size: self.batch_size,
        }
    }

    pub fn topology_params(&self) -> TopologyParams {
        TopologyParams {
            side: self.area_side,
            radius: self.comm_radius,
            speed: self.agent_speed,
            dwell: self.waypoint_dwell,
            require_connected: self.require_connected,
        }
    }

    pub fn snr_test(&self) -> Vec<f64> {
        if self.snr_test_db.is_empty() {
            vec![self.snr_train_db]
        } else {
            self.snr_test_db.clone()
        }
    }

    pub fn rho_r_linear(&self) -> f64 {
        10f64.powf(self.rho_r_db / 10.0)
    }

    /// Model output width `O = 2·N_t·N_s`, also the cost of one model transfer.
    pub fn output_dim(&self) -> usize {
        2 * self.n_t * self.n_s
    }

    pub fn input_dim(&self) -> usize {
        2 * self.n_t * self.n_r
    }

    pub fn snapshot_interval(&self) -> u64 {
        self.metrics_interval.unwrap_or(self.n_agents as u64)
    }

    pub fn topology_seed(&self) -> u64 {
        self.topology_seed.unwrap_or(self.seed)
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.seed)
    }

    pub fn walk_seed(&self) -> u64 {
        self.walk_seed.unwrap_or(self.seed)
    }
}
