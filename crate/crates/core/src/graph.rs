//! Time-varying connectivity of the agent swarm and the token transition rule.
//!
//! Edges are never stored. `E(t)` is recomputed from agent positions at the
//! queried instant, which keeps arbitrary-time queries cheap for the
//! event-driven scheduler.

use std::sync::Mutex;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    StaticComplete,
    StaticRandomGeometric,
    MobilityWaypoint,
}

impl TopologyKind {
    pub fn is_static(self) -> bool {
        !matches!(self, TopologyKind::MobilityWaypoint)
    }
}

/// Geometry knobs shared by the geometric kinds. Ignored by `StaticComplete`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyParams {
    /// Side length of the square deployment area.
    pub side: f64,
    /// Communication radius; agents closer than this are linked.
    pub radius: f64,
    /// Waypoint travel speed (distance per time unit).
    pub speed: f64,
    /// Pause at each waypoint before the next leg.
    pub dwell: f64,
    /// Redraw static geometric layouts until the graph is connected.
    pub require_connected: bool,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams {
            side: 1.0,
            radius: 0.5,
            speed: 0.01,
            dwell: 5.0,
            require_connected: true,
        }
    }
}

type Point = [f64; 2];

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// One keyframe of a piecewise-linear track: the agent is at `pos` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe {
    pub time: f64,
    pub pos: Point,
}

/// Piecewise-linear trajectory. Random-waypoint tracks are extended lazily.
#[derive(Debug)]
struct Track {
    frames: Vec<Keyframe>,
    generator: Option<WaypointGen>,
}

#[derive(Debug)]
struct WaypointGen {
    rng: Rng,
    side: f64,
    speed: f64,
    dwell: f64,
}

impl Track {
    fn extend_to(&mut self, t: f64) {
        let Some(gen) = self.generator.as_mut() else {
            return;
        };
        while self.frames.last().map_or(true, |f| f.time < t) {
            let last = *self.frames.last().expect("tracks start with a keyframe");
            let next = [gen.rng.random::<f64>() * gen.side, gen.rng.random::<f64>() * gen.side];
            let travel = dist(last.pos, next) / gen.speed;
            let arrive = last.time + travel;
            self.frames.push(Keyframe { time: arrive, pos: next });
            self.frames.push(Keyframe {
                time: arrive + gen.dwell,
                pos: next,
            });
        }
    }

    fn position(&mut self, t: f64) -> Point {
        self.extend_to(t);
        let frames = &self.frames;
        // first frame with time > t
        let idx = frames.partition_point(|f| f.time <= t);
        if idx == 0 {
            return frames[0].pos;
        }
        if idx == frames.len() {
            return frames[idx - 1].pos;
        }
        let (a, b) = (frames[idx - 1], frames[idx]);
        let span = b.time - a.time;
        if span <= 0.0 {
            return b.pos;
        }
        let w = (t - a.time) / span;
        [
            a.pos[0] + w * (b.pos[0] - a.pos[0]),
            a.pos[1] + w * (b.pos[1] - a.pos[1]),
        ]
    }
}

#[derive(Debug)]
enum Layout {
    Complete,
    Fixed(Vec<Point>),
    Moving(Vec<Mutex<Track>>),
}

/// Undirected graph `G(t)` over `n_agents` agents.
#[derive(Debug)]
pub struct DynamicGraph {
    n_agents: usize,
    kind: TopologyKind,
    params: TopologyParams,
    seed: u64,
    layout: Layout,
}

impl Clone for DynamicGraph {
    fn clone(&self) -> Self {
        let layout = match &self.layout {
            Layout::Complete => Layout::Complete,
            Layout::Fixed(p) => Layout::Fixed(p.clone()),
            Layout::Moving(tracks) => Layout::Moving(
                tracks
                    .iter()
                    .map(|t| {
                        let t = t.lock().expect("track lock");
                        Mutex::new(Track {
                            frames: t.frames.clone(),
                            generator: t.generator.as_ref().map(|g| WaypointGen {
                                rng: g.rng.clone(),
                                side: g.side,
                                speed: g.speed,
                                dwell: g.dwell,
                            }),
                        })
                    })
                    .collect(),
            ),
        };
        DynamicGraph {
            n_agents: self.n_agents,
            kind: self.kind,
            params: self.params,
            seed: self.seed,
            layout,
        }
    }
}

const MAX_LAYOUT_ATTEMPTS: u64 = 10_000;

impl DynamicGraph {
    pub fn new(n_agents: usize, kind: TopologyKind, params: TopologyParams, seed: u64) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::arg("graph needs at least one agent"));
        }
        if kind != TopologyKind::StaticComplete {
            if !(params.side > 0.0) || !params.side.is_finite() {
                return Err(Error::arg("area side must be positive"));
            }
            if !(params.radius >= 0.0) {
                return Err(Error::arg("communication radius must be nonnegative"));
            }
        }
        let layout = match kind {
            TopologyKind::StaticComplete => Layout::Complete,
            TopologyKind::StaticRandomGeometric => {
                let mut attempt = 0;
                loop {
                    let mut rng = rng::seeded(seed, rng::stream::TOPOLOGY + attempt);
                    let pts = uniform_points(n_agents, params.side, &mut rng);
                    if !params.require_connected || points_connected(&pts, params.radius) {
                        break Layout::Fixed(pts);
                    }
                    attempt += 1;
                    if attempt >= MAX_LAYOUT_ATTEMPTS {
                        return Err(Error::arg(format!(
                            "no connected layout found for radius {} after {} draws",
                            params.radius, MAX_LAYOUT_ATTEMPTS
                        )));
                    }
                }
            }
            TopologyKind::MobilityWaypoint => {
                if !(params.speed > 0.0) || !(params.dwell >= 0.0) {
                    return Err(Error::arg("waypoint mobility needs speed > 0 and dwell >= 0"));
                }
                let tracks = (0..n_agents)
                    .map(|i| {
                        let mut rng = rng::seeded(seed, rng::stream::MOBILITY + i as u64);
                        let start = [rng.random::<f64>() * params.side, rng.random::<f64>() * params.side];
                        Mutex::new(Track {
                            frames: vec![Keyframe { time: 0.0, pos: start }],
                            generator: Some(WaypointGen {
                                rng,
                                side: params.side,
                                speed: params.speed,
                                dwell: params.dwell,
                            }),
                        })
                    })
                    .collect();
                Layout::Moving(tracks)
            }
        };
        Ok(DynamicGraph {
            n_agents,
            kind,
            params,
            seed,
            layout,
        })
    }

    /// Mobile graph from explicit keyframed tracks; agents hold their last
    /// keyframe position forever after.
    pub fn from_tracks(radius: f64, tracks: Vec<Vec<Keyframe>>) -> Result<Self> {
        if tracks.is_empty() || tracks.iter().any(|t| t.is_empty()) {
            return Err(Error::arg("every track needs at least one keyframe"));
        }
        for t in &tracks {
            if t.windows(2).any(|w| w[1].time < w[0].time) {
                return Err(Error::arg("keyframes must be time-ordered"));
            }
        }
        let n_agents = tracks.len();
        let layout = Layout::Moving(
            tracks
                .into_iter()
                .map(|frames| Mutex::new(Track { frames, generator: None }))
                .collect(),
        );
        Ok(DynamicGraph {
            n_agents,
            kind: TopologyKind::MobilityWaypoint,
            params: TopologyParams {
                radius,
                ..TopologyParams::default()
            },
            seed: 0,
            layout,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_agent(&self, i: usize) -> Result<()> {
        if i >= self.n_agents {
            return Err(Error::arg(format!("agent id {i} out of range 0..{}", self.n_agents)));
        }
        Ok(())
    }

    /// Agent position at time `t`, or `None` for the complete topology.
    pub fn position(&self, i: usize, t: f64) -> Result<Option<Point>> {
        self.check_agent(i)?;
        Ok(match &self.layout {
            Layout::Complete => None,
            Layout::Fixed(p) => Some(p[i]),
            Layout::Moving(tracks) => Some(tracks[i].lock().expect("track lock").position(t)),
        })
    }

    fn positions(&self, t: f64) -> Option<Vec<Point>> {
        match &self.layout {
            Layout::Complete => None,
            Layout::Fixed(p) => Some(p.clone()),
            Layout::Moving(tracks) => Some(
                tracks
                    .iter()
                    .map(|tr| tr.lock().expect("track lock").position(t))
                    .collect(),
            ),
        }
    }

    fn linked(&self, a: Point, b: Point) -> bool {
        self.params.radius > 0.0 && dist(a, b) <= self.params.radius
    }

    /// Sorted neighbor ids of `i` at time `t` (self excluded).
    pub fn neighbors(&self, i: usize, t: f64) -> Result<Vec<usize>> {
        self.check_agent(i)?;
        if !(t >= 0.0) {
            return Err(Error::arg(format!("query time must be >= 0, got {t}")));
        }
        Ok(match &self.layout {
            Layout::Complete => (0..self.n_agents).filter(|&j| j != i).collect(),
            Layout::Fixed(p) => (0..self.n_agents)
                .filter(|&j| j != i && self.linked(p[i], p[j]))
                .collect(),
            Layout::Moving(_) => {
                let p = self.positions(t).expect("moving layout has positions");
                (0..self.n_agents)
                    .filter(|&j| j != i && self.linked(p[i], p[j]))
                    .collect()
            }
        })
    }

    /// All undirected edges `(i, j)` with `i < j` at time `t`.
    pub fn edges_at(&self, t: f64) -> Vec<(usize, usize)> {
        let n = self.n_agents;
        let mut out = Vec::new();
        match self.positions(t) {
            None => {
                for i in 0..n {
                    for j in i + 1..n {
                        out.push((i, j));
                    }
                }
            }
            Some(p) => {
                for i in 0..n {
                    for j in i + 1..n {
                        if self.linked(p[i], p[j]) {
                            out.push((i, j));
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjacency lists for every agent at time `t`.
    pub fn adjacency(&self, t: f64) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_agents];
        for (i, j) in self.edges_at(t) {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn is_connected(&self, t: f64) -> bool {
        is_connected(&self.adjacency(t))
    }

    /// Uniform transition over the closed neighborhood `{i} ∪ N(i, t)`.
    pub fn transition(&self, i: usize, t: f64) -> Result<TransitionDistribution> {
        let mut support = self.neighbors(i, t)?;
        let pos = support.partition_point(|&j| j < i);
        support.insert(pos, i);
        let p = 1.0 / support.len() as f64;
        Ok(TransitionDistribution {
            source: i,
            time: t,
            probs: vec![p; support.len()],
            support,
        })
    }
}

fn uniform_points(n: usize, side: f64, rng: &mut Rng) -> Vec<Point> {
    (0..n)
        .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
        .collect()
}

fn points_connected(pts: &[Point], radius: f64) -> bool {
    let n = pts.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if radius > 0.0 && dist(pts[i], pts[j]) <= radius {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    is_connected(&adj)
}

fn is_connected(adj: &[Vec<usize>]) -> bool {
    if adj.is_empty() {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Next-hop distribution `P_i(t)` for a token currently at `source`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDistribution {
    pub source: usize,
    pub time: f64,
    pub support: Vec<usize>,
    pub probs: Vec<f64>,
}

impl TransitionDistribution {
    pub fn new(source: usize, time: f64, support: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::arg("support and probabilities must be nonempty and equal length"));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::arg("probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("probabilities sum to {total}, not 1")));
        }
        Ok(TransitionDistribution {
            source,
            time,
            support,
            probs,
        })
    }
}

/// Inverse-CDF draw from `d`.
pub fn sample_next(d: &TransitionDistribution, rng: &mut Rng) -> usize {
    if d.support.len() == 1 {
        return d.support[0];
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&j, &p) in d.support.iter().zip(&d.probs) {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // rounding left the cumulative sum a hair below 1
    *d.support
        .iter()
        .zip(&d.probs)
        .rev()
        .find(|(_, &p)| p > 0.0)
        .map(|(j, _)| j)
        .expect("distribution has positive mass")
}
