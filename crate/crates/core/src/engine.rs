//! Deterministic simulation of one `(algorithm, seed)` run.
//!
//! Walk methods are driven by a global event queue. Each walk alternates
//! `Arrive` (token reaches an agent, queues if the agent is busy) and
//! `Depart` (service finishes after `compute_time`, the update is applied,
//! and the token hops using the graph at that instant, landing
//! `hop_latency` later). Events are ordered by `(time, walk, kind)`.
//!
//! DGD and D-ADMM run synchronous rounds; a round costs
//! `compute_time + hop_latency` and counts as `N` services.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::admm::{consensus_model, hop_token, service_token, token_sum_gap, AgentState, Hop, HyperParams, Mat, Token};
use crate::baselines::{average, dgd_round, Dadmm, ExactWalkSolver};
use crate::codec::{Reader, Writer};
use crate::config::{Algorithm, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, hop_cost, round_cost, sort_records, MetricRecord};
use crate::rng::{self, stream, Rng, RngState};
use crate::workload::Workload;

const CHECKPOINT_MAGIC: &[u8; 8] = b"ISPWCKP1";
const CHECKPOINT_VERSION: u32 = 1;

/// Relative tolerance of the token-sum guard.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Depart = 0,
    Arrive = 1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub walk: usize,
    pub kind: EventKind,
    /// Destination agent for `Arrive`; the serving agent for `Depart`.
    pub agent: usize,
}

impl Event {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.walk.cmp(&other.walk))
            .then(self.kind.cmp(&other.kind))
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed so BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxServices,
    MaxTime,
    TargetNmse,
    Diverged,
    /// Event queue drained (cannot happen with at least one walk).
    Idle,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::MaxServices => "max-services",
            StopReason::MaxTime => "max-time",
            StopReason::TargetNmse => "target-nmse",
            StopReason::Diverged => "diverged",
            StopReason::Idle => "idle",
        }
    }

    /// Whether the run ended on a budget bound rather than on its target.
    pub fn is_flagged(self) -> bool {
        !matches!(self, StopReason::TargetNmse)
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => StopReason::MaxServices,
            1 => StopReason::MaxTime,
            2 => StopReason::TargetNmse,
            3 => StopReason::Diverged,
            4 => StopReason::Idle,
            _ => return Err(Error::Format(format!("bad stop reason {c}"))),
        })
    }
}

/// What one call to [`Simulation::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum StepInfo {
    Arrived { time: f64, walk: usize, agent: usize, queued: bool },
    Served { time: f64, walk: usize, agent: usize, hop: Hop },
    Round { time: f64, edges: usize },
    Stopped(StopReason),
}

#[derive(Debug, Clone)]
enum Method {
    Walks(WalkState),
    Dgd { xs: Vec<Mat> },
    Dadmm(Dadmm),
}

#[derive(Debug, Clone)]
struct WalkState {
    agents: Vec<AgentState>,
    tokens: Vec<Token>,
    batch_rngs: Vec<Rng>,
    walk_rngs: Vec<Rng>,
    queue: BinaryHeap<Event>,
    busy: Vec<Option<usize>>,
    waiting: Vec<VecDeque<usize>>,
    exact: Option<ExactWalkSolver>,
}

/// Agent where walk `m` of `walks` starts: walks are spread evenly.
pub fn start_agent(walk: usize, walks: usize, n_agents: usize) -> usize {
    walk * n_agents / walks
}

pub struct Simulation {
    cfg: ExperimentConfig,
    hp: HyperParams,
    work: Workload,
    method: Method,
    time: f64,
    services: u64,
    comm: f64,
    next_snapshot: u64,
    records: Vec<MetricRecord>,
    stopped: Option<StopReason>,
    max_identity_gap: f64,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let work = Workload::build(cfg)?;
        Self::with_workload(cfg, work)
    }

    /// Starts a run on a prebuilt workload, which must come from `cfg`.
    pub fn with_workload(cfg: &ExperimentConfig, work: Workload) -> Result<Self> {
        cfg.validate()?;
        let hp = cfg.hyper_params();
        let (q, o) = (cfg.hidden_nodes, cfg.output_dim());
        let n = cfg.n_agents;
        let method = match cfg.algorithm {
            Algorithm::Dgd => Method::Dgd {
                xs: vec![Mat::zeros(q, o); n],
            },
            Algorithm::Dadmm => Method::Dadmm(Dadmm::new(n, q, o, cfg.rho_dadmm)?),
            alg => {
                let m = hp.m_walks;
                let exact = match alg {
                    Algorithm::Ispw => None,
                    _ => Some(ExactWalkSolver::new(&work.problems, &hp)?),
                };
                let mut queue = BinaryHeap::new();
                let tokens = (0..m)
                    .map(|w| {
                        let at = start_agent(w, m, n);
                        queue.push(Event {
                            time: 0.0,
                            walk: w,
                            kind: EventKind::Arrive,
                            agent: at,
                        });
                        Token::new(w, at, q, o)
                    })
                    .collect();
                Method::Walks(WalkState {
                    agents: (0..n).map(|i| AgentState::zeros(i, q, o)).collect(),
                    tokens,
                    batch_rngs: (0..n)
                        .map(|i| rng::seeded(cfg.walk_seed(), stream::AGENT_BATCH + i as u64))
                        .collect(),
                    walk_rngs: (0..m).map(|w| rng::seeded(cfg.walk_seed(), stream::WALK + w as u64)).collect(),
                    queue,
                    busy: vec![None; n],
                    waiting: vec![VecDeque::new(); n],
                    exact,
                })
            }
        };
        let mut sim = Simulation {
            cfg: cfg.clone(),
            hp,
            work,
            method,
            time: 0.0,
            services: 0,
            comm: 0.0,
            next_snapshot: cfg.snapshot_interval(),
            records: Vec::new(),
            stopped: None,
            max_identity_gap: 0.0,
        };
        sim.snapshot()?;
        Ok(sim)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn workload(&self) -> &Workload {
        &self.work
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn services(&self) -> u64 {
        self.services
    }

    pub fn comm_units(&self) -> f64 {
        self.comm
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stopped
    }

    /// Largest token-sum gap seen at any snapshot (walk methods only).
    pub fn max_identity_gap(&self) -> f64 {
        self.max_identity_gap
    }

    pub fn agents(&self) -> Option<&[AgentState]> {
        match &self.method {
            Method::Walks(w) => Some(&w.agents),
            _ => None,
        }
    }

    pub fn tokens(&self) -> Option<&[Token]> {
        match &self.method {
            Method::Walks(w) => Some(&w.tokens),
            _ => None,
        }
    }

    /// Per-agent iterates of the synchronous methods.
    pub fn iterates(&self) -> Option<&[Mat]> {
        match &self.method {
            Method::Dgd { xs } => Some(xs),
            Method::Dadmm(d) => Some(&d.x),
            Method::Walks(_) => None,
        }
    }

    /// The current global model estimate.
    pub fn model(&self) -> Result<Mat> {
        match &self.method {
            Method::Walks(w) => consensus_model(&w.tokens),
            Method::Dgd { xs } => average(xs),
            Method::Dadmm(d) => average(&d.x),
        }
    }

    /// Scores the current model and appends a record.
    fn snapshot(&mut self) -> Result<()> {
        if let Method::Walks(w) = &self.method {
            let gap = token_sum_gap(&w.tokens, &w.agents, self.hp.rho)?;
            let scale = consensus_model(&w.tokens)?.amax();
            if gap.is_finite() {
                self.max_identity_gap = self.max_identity_gap.max(gap);
                if gap > IDENTITY_TOLERANCE * (1.0 + scale) {
                    return Err(Error::Invariant(format!(
                        "token-sum identity violated: gap {gap:e} at t = {} after {} services",
                        self.time, self.services
                    )));
                }
            }
        }
        let model = self.model()?;
        let ev = evaluate(&model, &self.work.test_features, &self.work.test, self.cfg.rho_r_linear())?;
        self.records.push(MetricRecord {
            algorithm: self.cfg.algorithm.name().to_string(),
            seed: self.cfg.seed,
            simulated_time: self.time,
            services_total: self.services,
            comm_units: self.comm,
            nmse_test: ev.nmse,
            spectral_eff_mean: ev.rate,
            spectral_eff_raw: ev.rate_raw,
        });
        if !model.iter().all(|v| v.is_finite()) || !ev.nmse.is_finite() {
            self.stopped = Some(StopReason::Diverged);
        } else if self.cfg.target_nmse.is_some_and(|t| ev.nmse <= t) {
            self.stopped = Some(StopReason::TargetNmse);
        }
        Ok(())
    }

    fn last_snapshot_is_current(&self) -> bool {
        self.records
            .last()
            .is_some_and(|r| r.services_total == self.services && r.simulated_time == self.time)
    }

    fn finish(&mut self, reason: StopReason) -> Result<StepInfo> {
        if !self.last_snapshot_is_current() {
            self.snapshot()?;
        }
        let reason = self.stopped.unwrap_or(reason);
        self.stopped = Some(reason);
        Ok(StepInfo::Stopped(reason))
    }

    fn after_services(&mut self) -> Result<()> {
        if self.services >= self.next_snapshot {
            let every = self.cfg.snapshot_interval();
            while self.next_snapshot <= self.services {
                self.next_snapshot += every;
            }
            self.snapshot()?;
        }
        Ok(())
    }

    /// Processes one event (or one synchronous round).
    pub fn step(&mut self) -> Result<StepInfo> {
        if let Some(r) = self.stopped {
            return Ok(StepInfo::Stopped(r));
        }
        if self.services >= self.cfg.max_services {
            return self.finish(StopReason::MaxServices);
        }
        match &self.method {
            Method::Walks(_) => self.step_walk(),
            _ => self.step_round(),
        }
    }

    fn step_round(&mut self) -> Result<StepInfo> {
        let t = self.time;
        if t >= self.cfg.max_time {
            return self.finish(StopReason::MaxTime);
        }
        let adj = self.work.graph.adjacency(t);
        let edges = adj.iter().map(Vec::len).sum::<usize>() / 2;
        match &mut self.method {
            Method::Dgd { xs } => dgd_round(xs, &self.work.problems, &adj, self.cfg.alpha_dgd)?,
            Method::Dadmm(d) => d.round(&self.work.problems, &adj)?,
            Method::Walks(_) => unreachable!("walk methods are event driven"),
        }
        self.time = t + self.cfg.compute_time + self.cfg.hop_latency;
        self.services += self.cfg.n_agents as u64;
        self.comm += round_cost(edges, self.cfg.output_dim());
        self.after_services()?;
        Ok(StepInfo::Round { time: t, edges })
    }

    fn step_walk(&mut self) -> Result<StepInfo> {
        let Method::Walks(ws) = &mut self.method else {
            unreachable!()
        };
        let Some(ev) = ws.queue.peek().copied() else {
            return self.finish(StopReason::Idle);
        };
        if ev.time > self.cfg.max_time {
            return self.finish(StopReason::MaxTime);
        }
        ws.queue.pop();
        self.time = ev.time;
        let compute = self.cfg.compute_time;
        match ev.kind {
            EventKind::Arrive => {
                let queued = ws.busy[ev.agent].is_some();
                if queued {
                    ws.waiting[ev.agent].push_back(ev.walk);
                } else {
                    ws.busy[ev.agent] = Some(ev.walk);
                    ws.queue.push(Event {
                        time: ev.time + compute,
                        walk: ev.walk,
                        kind: EventKind::Depart,
                        agent: ev.agent,
                    });
                }
                Ok(StepInfo::Arrived {
                    time: ev.time,
                    walk: ev.walk,
                    agent: ev.agent,
                    queued,
                })
            }
            EventKind::Depart => {
                let i = ev.agent;
                let token = &mut ws.tokens[ev.walk];
                let agent = &mut ws.agents[i];
                let problem = &self.work.problems[i];
                match &ws.exact {
                    None => service_token(agent, token, problem, &self.hp, &mut ws.batch_rngs[i])?,
                    Some(s) => s.service(agent, token, problem, &self.hp)?,
                }
                let hop = hop_token(token, &self.work.graph, ev.time, &mut ws.walk_rngs[ev.walk])?;
                ws.queue.push(Event {
                    time: ev.time + self.cfg.hop_latency,
                    walk: ev.walk,
                    kind: EventKind::Arrive,
                    agent: hop.to,
                });
                ws.busy[i] = None;
                if let Some(next) = ws.waiting[i].pop_front() {
                    ws.busy[i] = Some(next);
                    ws.queue.push(Event {
                        time: ev.time + compute,
                        walk: next,
                        kind: EventKind::Depart,
                        agent: i,
                    });
                }
                self.services += 1;
                self.comm += hop_cost(&hop, self.cfg.output_dim());
                self.after_services()?;
                Ok(StepInfo::Served {
                    time: ev.time,
                    walk: ev.walk,
                    agent: i,
                    hop,
                })
            }
        }
    }

    /// Runs to the first satisfied stop criterion.
    pub fn run(&mut self) -> Result<StopReason> {
        loop {
            if let StepInfo::Stopped(r) = self.step()? {
                return Ok(r);
            }
        }
    }

    /// Runs until at least `services` services are done or the run stops.
    pub fn run_until_services(&mut self, services: u64) -> Result<Option<StopReason>> {
        while self.services < services {
            if let StepInfo::Stopped(r) = self.step()? {
                return Ok(Some(r));
            }
        }
        Ok(self.stopped)
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.cfg.to_toml_string());
        w.f64(self.time);
        w.u64(self.services);
        w.f64(self.comm);
        w.u64(self.next_snapshot);
        w.f64(self.max_identity_gap);
        w.bool(self.stopped.is_some());
        w.u8(self.stopped.map_or(0, StopReason::code));
        w.usize(self.records.len());
        for r in &self.records {
            w.str(&r.algorithm);
            w.u64(r.seed);
            w.f64(r.simulated_time);
            w.u64(r.services_total);
            w.f64(r.comm_units);
            w.f64(r.nmse_test);
            w.f64(r.spectral_eff_mean);
            w.f64(r.spectral_eff_raw);
        }
        match &self.method {
            Method::Walks(ws) => {
                w.usize(ws.agents.len());
                for a in &ws.agents {
                    w.matrix(&a.x);
                    w.matrix(&a.y);
                    w.matrix(&a.mu);
                    w.u64(a.k);
                    w.matrix(&a.prev_contribution);
                }
                w.usize(ws.tokens.len());
                for t in &ws.tokens {
                    w.matrix(&t.z);
                    w.u64(t.s);
                    w.usize(t.location);
                }
                for r in ws.batch_rngs.iter().chain(&ws.walk_rngs) {
                    w.rng(&RngState::capture(r));
                }
                let mut events: Vec<Event> = ws.queue.iter().copied().collect();
                events.sort_by(|a, b| a.key_cmp(b));
                w.usize(events.len());
                for e in events {
                    w.f64(e.time);
                    w.usize(e.walk);
                    w.u8(e.kind as u8);
                    w.usize(e.agent);
                }
                for (b, q) in ws.busy.iter().zip(&ws.waiting) {
                    w.bool(b.is_some());
                    w.usize(b.unwrap_or(0));
                    w.usize(q.len());
                    for &m in q {
                        w.usize(m);
                    }
                }
            }
            Method::Dgd { xs } => {
                for x in xs {
                    w.matrix(x);
                }
            }
            Method::Dadmm(d) => {
                for (x, p) in d.x.iter().zip(&d.p) {
                    w.matrix(x);
                    w.matrix(p);
                }
            }
        }
        w.into_bytes()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.checkpoint_bytes())?;
        Ok(())
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let cfg = ExperimentConfig::from_toml_str(&r.str()?)?;
        let mut sim = Simulation::new(&cfg)?;
        sim.time = r.f64()?;
        sim.services = r.u64()?;
        sim.comm = r.f64()?;
        sim.next_snapshot = r.u64()?;
        sim.max_identity_gap = r.f64()?;
        let has_stop = r.bool()?;
        let code = r.u8()?;
        sim.stopped = if has_stop { Some(StopReason::from_code(code)?) } else { None };
        let n_records = r.usize()?;
        sim.records = (0..n_records)
            .map(|_| {
                Ok(MetricRecord {
                    algorithm: r.str()?,
                    seed: r.u64()?,
                    simulated_time: r.f64()?,
                    services_total: r.u64()?,
                    comm_units: r.f64()?,
                    nmse_test: r.f64()?,
                    spectral_eff_mean: r.f64()?,
                    spectral_eff_raw: r.f64()?,
                })
            })
            .collect::<Result<_>>()?;
        let shape_check = |m: &Mat, like: &Mat| -> Result<()> {
            if m.shape() != like.shape() {
                return Err(Error::Format("checkpoint matrix shape mismatch".into()));
            }
            Ok(())
        };
        match &mut sim.method {
            Method::Walks(ws) => {
                if r.usize()? != ws.agents.len() {
                    return Err(Error::Format("checkpoint agent count mismatch".into()));
                }
                for a in &mut ws.agents {
                    let (x, y, mu) = (r.matrix()?, r.matrix()?, r.matrix()?);
                    let k = r.u64()?;
                    let prev = r.matrix()?;
                    for m in [&x, &y, &mu, &prev] {
                        shape_check(m, &a.x)?;
                    }
                    a.x = x;
                    a.y = y;
                    a.mu = mu;
                    a.k = k;
                    a.prev_contribution = prev;
                }
                if r.usize()? != ws.tokens.len() {
                    return Err(Error::Format("checkpoint walk count mismatch".into()));
                }
                let n = ws.agents.len();
                for t in &mut ws.tokens {
                    let z = r.matrix()?;
                    shape_check(&z, &t.z)?;
                    t.z = z;
                    t.s = r.u64()?;
                    t.location = r.usize()?;
                    if t.location >= n {
                        return Err(Error::Format("token location out of range".into()));
                    }
                }
                for g in ws.batch_rngs.iter_mut().chain(ws.walk_rngs.iter_mut()) {
                    *g = r.rng()?.restore();
                }
                let n_events = r.usize()?;
                ws.queue.clear();
                for _ in 0..n_events {
                    let time = r.f64()?;
                    let walk = r.usize()?;
                    let kind = match r.u8()? {
                        0 => EventKind::Depart,
                        1 => EventKind::Arrive,
                        k => return Err(Error::Format(format!("bad event kind {k}"))),
                    };
                    let agent = r.usize()?;
                    if walk >= ws.tokens.len() || agent >= n {
                        return Err(Error::Format("event refers to unknown walk or agent".into()));
                    }
                    ws.queue.push(Event { time, walk, kind, agent });
                }
                for i in 0..n {
                    let busy = r.bool()?;
                    let who = r.usize()?;
                    ws.busy[i] = busy.then_some(who);
                    let len = r.usize()?;
                    ws.waiting[i] = (0..len).map(|_| r.usize()).collect::<Result<_>>()?;
                }
            }
            Method::Dgd { xs } => {
                for x in xs.iter_mut() {
                    let m = r.matrix()?;
                    shape_check(&m, x)?;
                    *x = m;
                }
            }
            Method::Dadmm(d) => {
                for i in 0..d.x.len() {
                    let (x, p) = (r.matrix()?, r.matrix()?);
                    shape_check(&x, &d.x[i])?;
                    shape_check(&p, &d.p[i])?;
                    d.x[i] = x;
                    d.p[i] = p;
                }
            }
        }
        r.finish()?;
        Ok(sim)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }
}

/// Result of one finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricRecord>,
    pub stop: StopReason,
    pub max_identity_gap: f64,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let mut sim = Simulation::new(cfg)?;
    let stop = sim.run()?;
    Ok(RunOutcome {
        records: sim.records.clone(),
        stop,
        max_identity_gap: sim.max_identity_gap,
    })
}

/// Runs every algorithm in `algorithms` for every seed in `seeds`, in
/// parallel, and returns the merged, sorted records plus per-run stop
/// reasons keyed by `(algorithm, seed)`.
pub fn compare(
    base: &ExperimentConfig,
    algorithms: &[Algorithm],
    seeds: &[u64],
) -> Result<(Vec<MetricRecord>, Vec<(Algorithm, u64, StopReason)>)> {
    let jobs: Vec<(Algorithm, u64)> = algorithms
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(alg, seed)| {
            let cfg = ExperimentConfig {
                algorithm: alg,
                seed,
                ..base.clone()
            };
            run_experiment(&cfg).map(|o| (alg, seed, o))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let mut stops = Vec::new();
    for (alg, seed, o) in outcomes {
        records.extend(o.records);
        stops.push((alg, seed, o.stop));
    }
    sort_records(&mut records);
    Ok((records, stops))
}
