//! Run configuration: versioned JSON, defaults, and cross-field checks.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::communicator::{CommPolicy, Latency, TransportConfig};
use crate::control::SiToUniParams;
use crate::dynamics::RobotState;
use crate::guidance::FormationSpec;
use crate::mpc::{Equilibrium, LinearAgentModel, OcpSpec, Polyhedron, ReplanSchedule, StageCost};
use crate::netgraph::{AgentId, CommGraph, EdgeSchedule, GraphSpec};
use crate::runtime::{AgentSpec, GuidanceKind, Role};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("config error at `{path}`: {msg}")]
pub struct ConfigError {
    pub path: String,
    pub msg: String,
}

fn err<T>(path: &str, msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        path: path.into(),
        msg: msg.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Containment,
    Formation,
    Rendezvous,
    Assignment,
    Mpc,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Containment => "containment",
            ScenarioKind::Formation => "formation",
            ScenarioKind::Rendezvous => "rendezvous",
            ScenarioKind::Assignment => "assignment",
            ScenarioKind::Mpc => "mpc",
        }
    }

    fn default_duration(self) -> f64 {
        match self {
            ScenarioKind::Containment => 30.0,
            ScenarioKind::Formation => 20.0,
            ScenarioKind::Rendezvous => 10.0,
            ScenarioKind::Assignment => 300.0,
            ScenarioKind::Mpc => 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    #[default]
    Static,
    TimeVarying,
    BestEffort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommConfig {
    #[serde(default)]
    pub profile: ProfileKind,
    /// Per-round edge activation probability (time-varying and best-effort).
    #[serde(default = "one")]
    pub activation: f64,
    #[serde(default)]
    pub drop_prob: f64,
    /// Fixed link latency, simulated seconds.
    #[serde(default)]
    pub latency: f64,
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            profile: ProfileKind::Static,
            activation: 1.0,
            drop_prob: 0.0,
            latency: 0.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    0.01
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainmentParams {
    pub leaders: Vec<AgentId>,
    #[serde(default = "one")]
    pub gain: f64,
    /// Initial positions; drawn uniformly from `[-spread, spread]²` when absent.
    #[serde(default)]
    pub initial: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn default_spread() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormationModel {
    #[default]
    SingleIntegrator,
    Unicycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationParams {
    /// Desired distances; a regular polygon of side `side` when absent.
    #[serde(default)]
    pub pairs: Option<FormationSpec>,
    #[serde(default = "one")]
    pub side: f64,
    #[serde(default)]
    pub model: FormationModel,
    #[serde(default)]
    pub mapping: Option<SiToUniParams>,
    /// Initial positions; polygon vertices plus uniform noise of this size when absent.
    #[serde(default)]
    pub initial: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
}

fn default_perturbation() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RendezvousParams {
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default)]
    pub initial: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_spread")]
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentParams {
    /// Robot poses `[x, y, θ]`; random in the arena when absent.
    #[serde(default)]
    pub robots: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub initial_tasks: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub hidden_tasks: Option<Vec<[f64; 2]>>,
    /// Side of the square arena random positions are drawn from, meters.
    #[serde(default = "default_arena")]
    pub arena: f64,
}

fn default_arena() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcParams {
    #[serde(default)]
    pub agents: Option<Vec<OcpSpec>>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub schedule: ReplanSchedule,
}

fn default_steps() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub scenario: ScenarioKind,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub graph: Option<GraphSpec>,
    #[serde(default)]
    pub comm: CommConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub containment: Option<ContainmentParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formation: Option<FormationParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendezvous: Option<RendezvousParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<AssignmentParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpc: Option<MpcParams>,
}

/// Parse and validate; every default is filled in the result.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    cfg.resolve()
}

/// A minimal config for `scenario`, then resolved with defaults.
pub fn default_config(scenario: ScenarioKind, n: usize, seed: u64) -> Result<ScenarioConfig, ConfigError> {
    ScenarioConfig {
        version: CONFIG_VERSION,
        scenario,
        n,
        seed,
        dt: default_dt(),
        duration: None,
        graph: None,
        comm: CommConfig::default(),
        containment: None,
        formation: None,
        rendezvous: None,
        assignment: None,
        mpc: None,
    }
    .resolve()
}

/// Command-line values layered over a config file (or over nothing).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<ScenarioKind>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
    /// `complete`, `er:<p>`, or a path to an adjacency matrix (JSON rows or
    /// whitespace-separated 0/1 lines).
    pub graph: Option<String>,
}

fn graph_arg(arg: &str, seed: u64) -> Result<serde_json::Value, ConfigError> {
    if arg == "complete" {
        return Ok(serde_json::json!("complete"));
    }
    if let Some(p) = arg.strip_prefix("er:") {
        let p: f64 = p.parse().map_err(|_| ConfigError {
            path: "graph".into(),
            msg: format!("bad edge probability in `{arg}`"),
        })?;
        return Ok(serde_json::json!({ "erdos_renyi": { "p": p, "seed": seed } }));
    }
    let text = std::fs::read_to_string(arg).map_err(|e| ConfigError {
        path: "graph".into(),
        msg: format!("{arg}: {e}"),
    })?;
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
        return Ok(if v.is_array() { serde_json::json!({ "matrix": v }) } else { v });
    }
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: Result<Vec<u8>, _> = line.split_whitespace().map(str::parse::<u8>).collect();
        rows.push(row.map_err(|_| ConfigError {
            path: "graph".into(),
            msg: format!("{arg}: rows must be 0/1 entries separated by spaces"),
        })?);
    }
    Ok(serde_json::json!({ "matrix": rows }))
}

/// Merge `overrides` into `base` (a config text, if any) and resolve.
pub fn build_config(base: Option<&str>, o: &Overrides) -> Result<ScenarioConfig, ConfigError> {
    use serde_json::{json, Value};
    let mut v: Value = match base {
        Some(text) => serde_json::from_str(text).map_err(|e| ConfigError {
            path: String::new(),
            msg: e.to_string(),
        })?,
        None => json!({ "n": 6 }),
    };
    let Some(obj) = v.as_object_mut() else {
        return err("", "config must be a JSON object");
    };
    if let Some(s) = o.scenario {
        if let Some(prev) = obj.get("scenario").and_then(Value::as_str) {
            if prev != s.name() {
                return err("scenario", format!("config is a {prev} run, command line asks for {}", s.name()));
            }
        }
        obj.insert("scenario".into(), json!(s));
    }
    if let Some(n) = o.n {
        obj.insert("n".into(), json!(n));
    }
    if let Some(seed) = o.seed {
        obj.insert("seed".into(), json!(seed));
    }
    if let Some(dt) = o.dt {
        obj.insert("dt".into(), json!(dt));
    }
    if let Some(d) = o.duration {
        obj.insert("duration".into(), json!(d));
    }
    if let Some(g) = &o.graph {
        let seed = obj.get("seed").and_then(Value::as_u64).unwrap_or(0);
        obj.insert("graph".into(), graph_arg(g, seed)?);
    }
    parse_config(&v.to_string())
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn uniform_points(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<[f64; 2]> {
    (0..n).map(|_| [r.gen_range(lo..=hi), r.gen_range(lo..=hi)]).collect()
}

fn check_len<T>(path: &str, v: &[T], n: usize) -> Result<(), ConfigError> {
    if v.len() != n {
        return err(path, format!("{} entries for n = {n}", v.len()));
    }
    Ok(())
}

fn check_finite(path: &str, pts: &[[f64; 2]]) -> Result<(), ConfigError> {
    if pts.iter().flatten().any(|x| !x.is_finite()) {
        return err(path, "non-finite coordinate");
    }
    Ok(())
}

/// Scalar integrators pulled toward +2 while `Σ x ≤ 1` holds jointly.
fn default_mpc_agents(n: usize, seed: u64) -> Vec<OcpSpec> {
    let mut r = rng(seed, 5);
    (0..n)
        .map(|_| OcpSpec {
            model: LinearAgentModel::integrator(1, vec![r.gen_range(-2.0..=-0.5)]),
            horizon: 10,
            state_set: None,
            input_set: Some(Polyhedron::boxed(&[-0.5], &[0.5])),
            coupling: Polyhedron::boxed(&[f64::NEG_INFINITY], &[1.0]),
            cost: StageCost {
                state_weights: vec![1.0],
                input_weights: vec![0.1],
                state_ref: Some(vec![2.0]),
                input_ref: Some(vec![0.0]),
            },
            terminal: Equilibrium {
                state: vec![0.0],
                input: vec![0.0],
            },
        })
        .collect()
}

impl ScenarioConfig {
    fn resolve(mut self) -> Result<Self, ConfigError> {
        if self.version != CONFIG_VERSION {
            return err("version", format!("unsupported schema version {} (expected {CONFIG_VERSION})", self.version));
        }
        let n = self.n;
        if n == 0 {
            return err("n", "need at least one agent");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return err("dt", format!("{} is not a positive time step", self.dt));
        }
        let duration = *self.duration.get_or_insert(self.scenario.default_duration());
        if !(duration > 0.0 && duration.is_finite()) {
            return err("duration", format!("{duration} is not a positive duration"));
        }
        let c = &self.comm;
        if !(0.0..=1.0).contains(&c.activation) {
            return err("comm.activation", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&c.drop_prob) {
            return err("comm.drop_prob", "must lie in [0, 1]");
        }
        if c.drop_prob > 0.0 && c.profile != ProfileKind::BestEffort {
            return err("comm.drop_prob", "only the best_effort profile drops messages");
        }
        if c.activation < 1.0 && c.profile == ProfileKind::Static {
            return err("comm.activation", "the static profile keeps every edge active");
        }
        if !(c.latency >= 0.0 && c.latency.is_finite()) {
            return err("comm.latency", "must be finite and ≥ 0");
        }

        let seed = self.seed;
        let blocks = [
            ("containment", self.containment.is_some()),
            ("formation", self.formation.is_some()),
            ("rendezvous", self.rendezvous.is_some()),
            ("assignment", self.assignment.is_some()),
            ("mpc", self.mpc.is_some()),
        ];
        if let Some((other, _)) = blocks.iter().find(|(name, set)| *set && *name != self.scenario.name()) {
            return err(other, format!("block does not apply to a {} run", self.scenario.name()));
        }
        match self.scenario {
            ScenarioKind::Containment => {
                let p = self.containment.get_or_insert_with(|| ContainmentParams {
                    leaders: (0..n.div_ceil(2)).collect(),
                    gain: 1.0,
                    initial: None,
                    spread: default_spread(),
                });
                if p.leaders.is_empty() {
                    return err("containment.leaders", "need at least one leader");
                }
                for (k, &l) in p.leaders.iter().enumerate() {
                    if l >= n {
                        return err(&format!("containment.leaders[{k}]"), format!("agent {l} does not exist (n = {n})"));
                    }
                    if p.leaders[..k].contains(&l) {
                        return err(&format!("containment.leaders[{k}]"), format!("agent {l} listed twice"));
                    }
                }
                if !(p.gain > 0.0 && p.gain.is_finite()) {
                    return err("containment.gain", "must be positive");
                }
                let spread = p.spread;
                let init = p.initial.get_or_insert_with(|| uniform_points(&mut rng(seed, 1), n, -spread, spread));
                check_len("containment.initial", init, n)?;
                check_finite("containment.initial", init)?;
            }
            ScenarioKind::Formation => {
                let p = self.formation.get_or_insert_with(|| FormationParams {
                    pairs: None,
                    side: 1.0,
                    model: FormationModel::SingleIntegrator,
                    mapping: None,
                    initial: None,
                    perturbation: default_perturbation(),
                });
                if p.pairs.is_none() {
                    if n < 3 {
                        return err("n", "a polygon formation needs n ≥ 3");
                    }
                    p.pairs = Some(
                        FormationSpec::regular_polygon(n, p.side).map_err(|e| ConfigError {
                            path: "formation.side".into(),
                            msg: e.to_string(),
                        })?,
                    );
                }
                let spec = p.pairs.as_ref().expect("filled above");
                if let Some((i, j, _)) = spec.unordered_pairs().into_iter().find(|&(_, j, _)| j >= n) {
                    return err("formation.pairs", format!("pair ({i},{j}) names an agent outside 0..{n}"));
                }
                if p.model == FormationModel::Unicycle && p.mapping.is_none() {
                    p.mapping = Some(SiToUniParams::default());
                }
                if self.graph.is_none() {
                    self.graph = Some(GraphSpec::Edges {
                        pairs: spec.unordered_pairs().into_iter().map(|(i, j, _)| (i, j)).collect(),
                        undirected: true,
                    });
                }
                if p.initial.is_none() {
                    let mut r = rng(seed, 2);
                    let e = p.perturbation;
                    let verts = FormationSpec::polygon_vertices(n, p.side);
                    p.initial = Some(
                        verts
                            .iter()
                            .map(|v| [v[0] + r.gen_range(-e..=e), v[1] + r.gen_range(-e..=e)])
                            .collect(),
                    );
                }
                let init = p.initial.as_ref().expect("filled above");
                check_len("formation.initial", init, n)?;
                check_finite("formation.initial", init)?;
            }
            ScenarioKind::Rendezvous => {
                let p = self.rendezvous.get_or_insert_with(|| RendezvousParams {
                    gain: 1.0,
                    initial: None,
                    spread: default_spread(),
                });
                let spread = p.spread;
                let init = p.initial.get_or_insert_with(|| uniform_points(&mut rng(seed, 3), n, -spread, spread));
                check_len("rendezvous.initial", init, n)?;
                check_finite("rendezvous.initial", init)?;
            }
            ScenarioKind::Assignment => {
                let p = self.assignment.get_or_insert_with(|| AssignmentParams {
                    robots: None,
                    initial_tasks: None,
                    hidden_tasks: None,
                    arena: default_arena(),
                });
                let mut r = rng(seed, 4);
                let a = p.arena;
                let robots = p.robots.get_or_insert_with(|| {
                    (0..n)
                        .map(|_| [r.gen_range(0.0..=a), r.gen_range(0.0..=a), r.gen_range(-PI..PI)])
                        .collect()
                });
                check_len("assignment.robots", robots, n)?;
                let init = p.initial_tasks.get_or_insert_with(|| uniform_points(&mut r, n, 0.0, a));
                if init.len() > n {
                    return err("assignment.initial_tasks", format!("{} initial tasks for {n} robots", init.len()));
                }
                check_finite("assignment.initial_tasks", init)?;
                let hidden = p.hidden_tasks.get_or_insert_with(|| uniform_points(&mut r, n, 0.0, a));
                check_finite("assignment.hidden_tasks", hidden)?;
            }
            ScenarioKind::Mpc => {
                let p = self.mpc.get_or_insert_with(|| MpcParams {
                    agents: None,
                    steps: default_steps(),
                    schedule: ReplanSchedule::Sweep,
                });
                let agents = p.agents.get_or_insert_with(|| default_mpc_agents(n, seed));
                check_len("mpc.agents", agents, n)?;
                for (i, a) in agents.iter().enumerate() {
                    if let Err(e) = a.validate() {
                        return err(&format!("mpc.agents[{i}]"), e.to_string());
                    }
                }
                if self.comm.profile != ProfileKind::Static {
                    return err("comm.profile", "plan exchange needs the static profile");
                }
                if self.graph.is_none() {
                    self.graph = Some(GraphSpec::Complete);
                }
            }
        }
        if self.graph.is_none() {
            self.graph = Some(GraphSpec::Complete);
        }
        let g = self.base_graph()?;
        if let Some(p) = &self.formation {
            if let Err(e) = p.pairs.as_ref().expect("filled").check_graph(&g) {
                return err("formation.pairs", e.to_string());
            }
        }
        if self.scenario == ScenarioKind::Mpc && (0..n).any(|i| (0..n).any(|j| i != j && !g.has_edge(i, j))) {
            return err("graph", "plan exchange needs a complete graph");
        }
        Ok(self)
    }

    pub fn base_graph(&self) -> Result<CommGraph, ConfigError> {
        let spec = self.graph.as_ref().unwrap_or(&GraphSpec::Complete);
        spec.build(self.n).map_err(|e| ConfigError {
            path: "graph".into(),
            msg: e.to_string(),
        })
    }

    pub fn duration(&self) -> f64 {
        self.duration.unwrap_or(self.scenario.default_duration())
    }

    pub fn ticks(&self) -> u64 {
        (self.duration() / self.dt).round() as u64
    }

    pub fn policy(&self) -> Result<CommPolicy, ConfigError> {
        let g = self.base_graph()?;
        let c = &self.comm;
        let stream_seed = self.seed ^ 0x5eed;
        let schedule = if c.activation < 1.0 {
            EdgeSchedule::random(g, c.activation, stream_seed).map_err(|e| ConfigError {
                path: "comm.activation".into(),
                msg: e.to_string(),
            })?
        } else {
            EdgeSchedule::Fixed(g)
        };
        let mut p = match c.profile {
            ProfileKind::Static => CommPolicy::static_graph(schedule.base().clone()),
            ProfileKind::TimeVarying => CommPolicy::time_varying(schedule),
            ProfileKind::BestEffort => CommPolicy::best_effort(schedule, c.drop_prob, stream_seed),
        };
        p.transport = TransportConfig {
            latency: Latency::Fixed(c.latency),
            ..p.transport
        };
        Ok(p)
    }

    /// Per-agent specs for the guidance scenarios.
    pub fn agent_specs(&self) -> Vec<AgentSpec> {
        let dt = self.dt;
        let with = |id: AgentId, state: RobotState, g: GuidanceKind, role: Role, mapping: Option<SiToUniParams>| {
            let mut s = AgentSpec::new(id, state, g);
            s.role = role;
            s.mapping = mapping;
            s.period = dt;
            s
        };
        match self.scenario {
            ScenarioKind::Containment => {
                let p = self.containment.as_ref().expect("resolved");
                let init = p.initial.as_ref().expect("resolved");
                (0..self.n)
                    .map(|i| {
                        let role = if p.leaders.contains(&i) { Role::Leader } else { Role::Follower };
                        with(i, RobotState::single(&init[i]), GuidanceKind::Containment { gain: p.gain }, role, None)
                    })
                    .collect()
            }
            ScenarioKind::Formation => {
                let p = self.formation.as_ref().expect("resolved");
                let init = p.initial.as_ref().expect("resolved");
                let g = GuidanceKind::Formation {
                    spec: p.pairs.clone().expect("resolved"),
                };
                let mut r = rng(self.seed, 6);
                (0..self.n)
                    .map(|i| match p.model {
                        FormationModel::SingleIntegrator => {
                            with(i, RobotState::single(&init[i]), g.clone(), Role::Generic, None)
                        }
                        FormationModel::Unicycle => {
                            // place the controlled point, not the wheel axis, at the initial position
                            let m = p.mapping.expect("resolved");
                            let th: f64 = r.gen_range(-PI..PI);
                            let (x, y) = (init[i][0] - m.lookahead * th.cos(), init[i][1] - m.lookahead * th.sin());
                            with(i, RobotState::unicycle(x, y, th), g.clone(), Role::Generic, Some(m))
                        }
                    })
                    .collect()
            }
            ScenarioKind::Rendezvous => {
                let p = self.rendezvous.as_ref().expect("resolved");
                let init = p.initial.as_ref().expect("resolved");
                (0..self.n)
                    .map(|i| with(i, RobotState::single(&init[i]), GuidanceKind::Rendezvous { gain: p.gain }, Role::Generic, None))
                    .collect()
            }
            ScenarioKind::Assignment | ScenarioKind::Mpc => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn containment_marks_three_leaders() {
        let cfg = parse_config(
            r#"{"scenario": "containment", "n": 6, "comm": {"profile": "time_varying", "activation": 0.5},
                "containment": {"leaders": [0, 1, 2]}}"#,
        )
        .unwrap();
        let roles: Vec<Role> = cfg.agent_specs().iter().map(|s| s.role).collect();
        assert_eq!(roles.iter().filter(|r| **r == Role::Leader).count(), 3);
        assert_eq!(roles[3..], [Role::Follower; 3]);
    }

    #[test]
    fn missing_dt_defaults() {
        let cfg = parse_config(r#"{"scenario": "rendezvous", "n": 3}"#).unwrap();
        assert_eq!(cfg.dt, 0.01);
        assert_eq!(cfg.duration, Some(10.0));
        assert_eq!(cfg.rendezvous.unwrap().initial.unwrap().len(), 3);
    }

    #[test]
    fn formation_pair_off_the_graph_is_rejected() {
        let e = parse_config(
            r#"{"scenario": "formation", "n": 3, "graph": {"edges": {"pairs": [[0, 1], [1, 2]]}},
                "formation": {"pairs": [[0, 1, 1.0], [0, 2, 1.0]]}}"#,
        )
        .unwrap_err();
        assert_eq!(e.path, "formation.pairs");
    }

    #[test]
    fn schema_errors_carry_the_path() {
        let e = parse_config(r#"{"scenario": "containment", "n": 4, "containment": {"leaders": [0, "x"]}}"#).unwrap_err();
        assert_eq!(e.path, "containment.leaders[1]");
        let e = parse_config(r#"{"scenario": "containment", "n": 4, "containment": {"leaders": [0, 9]}}"#).unwrap_err();
        assert_eq!(e.path, "containment.leaders[1]");
        let e = parse_config(r#"{"scenario": "rendezvous", "n": 2, "dtt": 0.1}"#).unwrap_err();
        assert!(e.msg.contains("dtt"), "{e}");
        let e = parse_config(r#"{"version": 2, "scenario": "rendezvous", "n": 2}"#).unwrap_err();
        assert_eq!(e.path, "version");
        let e = parse_config(r#"{"scenario": "rendezvous", "n": 2, "mpc": {}}"#).unwrap_err();
        assert_eq!(e.path, "mpc");
    }

    #[test]
    fn adjacency_matrix_is_accepted_verbatim() {
        let cfg = parse_config(
            r#"{"scenario": "rendezvous", "n": 3, "graph": {"matrix": [[0,1,0],[1,0,1],[0,1,0]]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.base_graph().unwrap().edge_count(), 4);
        assert!(parse_config(r#"{"scenario": "rendezvous", "n": 4, "graph": {"matrix": [[0,1],[1,0]]}}"#).is_err());
    }

    #[test]
    fn command_line_overrides() {
        let o = Overrides {
            scenario: Some(ScenarioKind::Rendezvous),
            n: Some(4),
            seed: Some(9),
            graph: Some("er:0.5".into()),
            ..Overrides::default()
        };
        let cfg = build_config(None, &o).unwrap();
        assert_eq!((cfg.n, cfg.seed), (4, 9));
        assert_eq!(cfg.graph, Some(GraphSpec::ErdosRenyi { p: 0.5, seed: 9, connected: true }));
        let base = r#"{"scenario": "formation", "n": 6}"#;
        assert_eq!(build_config(Some(base), &o).unwrap_err().path, "scenario");

        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("adj.txt");
        std::fs::write(&f, "0 1 1\n1 0 1\n1 1 0\n").unwrap();
        let o = Overrides {
            n: Some(3),
            graph: Some(f.display().to_string()),
            ..Overrides::default()
        };
        let cfg = build_config(Some(r#"{"scenario": "rendezvous"}"#), &o).unwrap();
        assert_eq!(cfg.base_graph().unwrap(), CommGraph::complete(3));
    }

    #[test]
    fn resolved_config_round_trips() {
        for kind in [
            ScenarioKind::Containment,
            ScenarioKind::Formation,
            ScenarioKind::Rendezvous,
            ScenarioKind::Assignment,
            ScenarioKind::Mpc,
        ] {
            let cfg = default_config(kind, 6, 3).unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(parse_config(&text).unwrap(), cfg, "{kind:?}");
        }
    }
}
