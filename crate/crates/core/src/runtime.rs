//! Per-robot harness wiring guidance, control and dynamics around one
//! communicator, plus a cancellable background job slot.
//!
//! Each tick the agent publishes its pose, evaluates its velocity law on the
//! positions that arrived, maps the command to its model and integrates.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Barrier, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::communicator::{Bus, CommError, CommPolicy, Communicator, Payload};
use crate::control::{offset_point, si_to_unicycle, SiToUniParams};
use crate::dynamics::{step, ControlInput, DynamicsError, IntegratorConfig, RobotState};
use crate::guidance::{
    guidance_evaluate, guidance_publish, Containment, Formation, FormationSpec, GuidanceError, Idle,
    Neighborhood, Rendezvous, VelocityLaw,
};
use crate::netgraph::AgentId;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("registration error: {0}")]
    Registration(String),
    #[error("a job is already running (job {0})")]
    Busy(JobId),
    #[error("job {0} is not running")]
    StaleJob(JobId),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("agent thread panicked")]
    Panicked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Leader,
    Follower,
    #[default]
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SingleIntegrator,
    Unicycle,
    DoubleIntegrator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GuidanceKind {
    Idle,
    Rendezvous { gain: f64 },
    Containment { gain: f64 },
    Formation { spec: FormationSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    #[serde(default)]
    pub role: Role,
    pub initial_state: RobotState,
    pub guidance: GuidanceKind,
    pub model: ModelKind,
    /// Offset-point map used to drive a unicycle with planar velocities.
    #[serde(default)]
    pub mapping: Option<SiToUniParams>,
    /// Guidance period, seconds.
    pub period: f64,
}

impl AgentSpec {
    pub fn new(id: AgentId, initial_state: RobotState, guidance: GuidanceKind) -> Self {
        let model = match initial_state {
            RobotState::SingleInt { .. } => ModelKind::SingleIntegrator,
            RobotState::Unicycle { .. } => ModelKind::Unicycle,
            RobotState::DoubleInt { .. } => ModelKind::DoubleIntegrator,
        };
        Self {
            id,
            role: Role::Generic,
            initial_state,
            guidance,
            model,
            mapping: None,
            period: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: String| Err(RuntimeError::Registration(format!("agent {}: {m}", self.id)));
        let state_ok = matches!(
            (&self.initial_state, self.model),
            (RobotState::SingleInt { .. }, ModelKind::SingleIntegrator)
                | (RobotState::Unicycle { .. }, ModelKind::Unicycle)
                | (RobotState::DoubleInt { .. }, ModelKind::DoubleIntegrator)
        );
        if !state_ok {
            return bad(format!("initial state does not match model {:?}", self.model));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return bad(format!("period {}", self.period));
        }
        let moving = !matches!(self.guidance, GuidanceKind::Idle);
        match self.model {
            ModelKind::Unicycle if moving && self.mapping.is_none() => {
                bad(format!("{} on a unicycle needs an si_to_unicycle mapping", self.guidance_name()))
            }
            ModelKind::DoubleIntegrator if moving => {
                bad(format!("{} has no double-integrator mapping", self.guidance_name()))
            }
            _ => {
                if let Some(m) = &self.mapping {
                    if !(m.lookahead > 0.0 && m.lookahead.is_finite()) {
                        return bad(format!("lookahead {}", m.lookahead));
                    }
                }
                if let (GuidanceKind::Containment { .. }, Role::Generic) = (&self.guidance, self.role) {
                    return bad("containment needs a leader or follower role".into());
                }
                Ok(())
            }
        }
    }

    fn guidance_name(&self) -> &'static str {
        match self.guidance {
            GuidanceKind::Idle => "idle",
            GuidanceKind::Rendezvous { .. } => "rendezvous",
            GuidanceKind::Containment { .. } => "containment",
            GuidanceKind::Formation { .. } => "formation",
        }
    }

    fn law(&self) -> Box<dyn VelocityLaw> {
        match &self.guidance {
            GuidanceKind::Idle => Box::new(Idle),
            GuidanceKind::Rendezvous { gain } => Box::new(Rendezvous { gain: *gain }),
            GuidanceKind::Containment { gain } => Box::new(Containment {
                is_leader: self.role == Role::Leader,
                gain: *gain,
            }),
            GuidanceKind::Formation { spec } => Box::new(Formation {
                spec: spec.clone(),
                self_id: self.id,
            }),
        }
    }
}

/// What one agent did in one tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub round: u64,
    pub agent: AgentId,
    /// Point published to neighbors (offset point for mapped unicycles).
    pub pose: Vec<f64>,
    pub state: RobotState,
    pub input: ControlInput,
    /// Neighbors whose position arrived this tick.
    pub heard: Vec<AgentId>,
}

/// The guidance → control → dynamics pipeline of one agent. It sees other
/// agents only through its communicator.
pub struct AgentCore {
    spec: AgentSpec,
    state: RobotState,
    comm: Communicator,
    law: Box<dyn VelocityLaw>,
    integrator: IntegratorConfig,
    round: u64,
}

impl AgentCore {
    pub fn new(spec: AgentSpec, policy: CommPolicy, bus: &Bus) -> Result<Self, RuntimeError> {
        spec.validate()?;
        if bus.is_registered(spec.id) {
            return Err(RuntimeError::Registration(format!("agent {} is already on the bus", spec.id)));
        }
        let comm = Communicator::new(spec.id, policy, bus)?;
        Ok(Self::with_comm(spec, comm))
    }

    fn with_comm(spec: AgentSpec, comm: Communicator) -> Self {
        Self {
            state: spec.initial_state.clone(),
            law: spec.law(),
            integrator: IntegratorConfig::new(spec.period),
            spec,
            comm,
            round: 0,
        }
    }

    pub fn with_law(mut self, law: Box<dyn VelocityLaw>) -> Self {
        self.law = law;
        self
    }

    pub fn with_integrator(mut self, cfg: IntegratorConfig) -> Self {
        self.integrator = cfg;
        self
    }

    pub fn id(&self) -> AgentId {
        self.spec.id
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// The point this agent controls and publishes.
    pub fn pose(&self) -> Vec<f64> {
        match (&self.state, &self.spec.mapping) {
            (RobotState::Unicycle { x, y, theta }, Some(m)) => offset_point(*x, *y, *theta, m.lookahead).to_vec(),
            (s, _) => s.position(),
        }
    }

    pub fn publish(&mut self) -> Result<(), RuntimeError> {
        let pose = self.pose();
        guidance_publish(&mut self.comm, &pose, self.round)?;
        Ok(())
    }

    fn command(&self, u: Vec<f64>) -> Result<ControlInput, RuntimeError> {
        Ok(match (&self.state, &self.spec.mapping) {
            (RobotState::Unicycle { theta, .. }, Some(m)) => {
                if u.len() != 2 {
                    return Err(DynamicsError::Model(format!("{}-D command for a unicycle", u.len())).into());
                }
                si_to_unicycle([u[0], u[1]], *theta, m)?
            }
            (RobotState::Unicycle { .. }, None) => ControlInput::UnicycleCmd { v: 0.0, omega: 0.0 },
            (RobotState::DoubleInt { pos, .. }, _) => ControlInput::Accel { a: vec![0.0; pos.len()] },
            (RobotState::SingleInt { .. }, _) => ControlInput::Velocity { u },
        })
    }

    /// Collect this round's positions, run the law, integrate one period.
    pub fn advance(&mut self) -> Result<TickRecord, RuntimeError> {
        let pose = self.pose();
        let (u, neigh): (Vec<f64>, Neighborhood) = guidance_evaluate(&mut self.comm, &pose, self.law.as_ref(), self.round)?;
        let input = self.command(u)?;
        self.state = step(&self.state, &input, &self.integrator)?;
        let rec = TickRecord {
            round: self.round,
            agent: self.spec.id,
            pose,
            state: self.state.clone(),
            input,
            heard: neigh.into_keys().collect(),
        };
        self.round += 1;
        Ok(rec)
    }

    pub fn tick(&mut self) -> Result<TickRecord, RuntimeError> {
        self.publish()?;
        self.advance()
    }
}

/// All agents on one bus advanced in lockstep from a single thread: every
/// agent publishes, then every agent advances, in id order.
pub struct Simulation {
    agents: Vec<AgentCore>,
    bus: Bus,
    dt: f64,
    tick: u64,
}

impl Simulation {
    /// `dt` overrides each agent's period so all share one clock.
    pub fn new(specs: Vec<AgentSpec>, policy: CommPolicy, dt: f64) -> Result<Self, RuntimeError> {
        let bus = Bus::new();
        let mut agents: Vec<AgentCore> = Vec::with_capacity(specs.len());
        for mut s in specs {
            s.period = dt;
            agents.push(AgentCore::new(s, policy.clone(), &bus)?);
        }
        agents.sort_by_key(AgentCore::id);
        Ok(Self { agents, bus, dt, tick: 0 })
    }

    pub fn from_cores(agents: Vec<AgentCore>, bus: Bus, dt: f64) -> Self {
        Self { agents, bus, dt, tick: 0 }
    }

    pub fn agents(&self) -> &[AgentCore] {
        &self.agents
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn states(&self) -> Vec<RobotState> {
        self.agents.iter().map(|a| a.state().clone()).collect()
    }

    pub fn poses(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(AgentCore::pose).collect()
    }

    pub fn step(&mut self) -> Result<Vec<TickRecord>, RuntimeError> {
        self.bus.set_time(self.time());
        for a in &mut self.agents {
            a.publish()?;
        }
        let recs = self.agents.iter_mut().map(AgentCore::advance).collect::<Result<Vec<_>, _>>()?;
        self.tick += 1;
        Ok(recs)
    }

    pub fn run(&mut self, ticks: u64, mut observe: impl FnMut(f64, &[TickRecord])) -> Result<(), RuntimeError> {
        for _ in 0..ticks {
            let t = self.time();
            let recs = self.step()?;
            observe(t, &recs);
        }
        Ok(())
    }
}

pub type JobId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Idle,
    Running,
    Done,
    Cancelled,
}

/// Cooperative cancellation flag handed to a running job.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::Acquire)
    }
}

pub type JobFn = Box<dyn FnOnce(&CancelToken) -> Option<Payload> + Send>;
pub type DoneHook = Box<dyn FnMut(JobId, &Payload) + Send>;

#[derive(Default)]
struct Slots {
    running: Option<(JobId, CancelToken)>,
    status: BTreeMap<JobId, JobStatus>,
    results: BTreeMap<JobId, Payload>,
}

#[derive(Default)]
struct JobShared {
    slots: Mutex<Slots>,
    hook: Mutex<Option<DoneHook>>,
}

/// One optimization job at a time, run on its own thread. The done hook
/// fires exactly once per job that finishes without being cancelled.
#[derive(Default)]
pub struct JobRunner {
    shared: Arc<JobShared>,
    next_id: AtomicU64,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl JobRunner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_done(&self, hook: DoneHook) {
        *self.shared.hook.lock().unwrap() = Some(hook);
    }

    pub fn submit(&self, job: JobFn) -> Result<JobId, RuntimeError> {
        let token = CancelToken::default();
        let id = {
            let mut s = self.shared.slots.lock().unwrap();
            if let Some((busy, _)) = &s.running {
                return Err(RuntimeError::Busy(*busy));
            }
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            s.running = Some((id, token.clone()));
            s.status.insert(id, JobStatus::Running);
            id
        };
        let shared = self.shared.clone();
        let h = thread::spawn(move || {
            let out = job(&token);
            // hold the hook lock across the transition so a finished job's
            // hook has run before another caller can observe it as done
            let mut hook = shared.hook.lock().unwrap();
            let result = {
                let mut s = shared.slots.lock().unwrap();
                if s.status.get(&id) != Some(&JobStatus::Running) {
                    return;
                }
                s.running = None;
                match out {
                    Some(r) => {
                        s.status.insert(id, JobStatus::Done);
                        s.results.insert(id, r.clone());
                        r
                    }
                    None => {
                        s.status.insert(id, JobStatus::Cancelled);
                        return;
                    }
                }
            };
            if let Some(f) = hook.as_mut() {
                f(id, &result);
            }
        });
        let mut threads = self.threads.lock().unwrap();
        threads.retain(|t| !t.is_finished());
        threads.push(h);
        Ok(id)
    }

    /// Cancel a running job. Its hook will not fire.
    pub fn cancel(&self, id: JobId) -> Result<(), RuntimeError> {
        let mut s = self.shared.slots.lock().unwrap();
        match &s.running {
            Some((r, token)) if *r == id => {
                token.0.store(true, Ordering::Release);
                s.running = None;
                s.status.insert(id, JobStatus::Cancelled);
                Ok(())
            }
            _ => Err(RuntimeError::StaleJob(id)),
        }
    }

    pub fn status(&self, id: JobId) -> JobStatus {
        self.shared.slots.lock().unwrap().status.get(&id).copied().unwrap_or(JobStatus::Idle)
    }

    pub fn result(&self, id: JobId) -> Option<Payload> {
        self.shared.slots.lock().unwrap().results.get(&id).cloned()
    }

    pub fn running(&self) -> Option<JobId> {
        self.shared.slots.lock().unwrap().running.as_ref().map(|(id, _)| *id)
    }

    /// Join every job thread started so far.
    pub fn join(&self) {
        let hs: Vec<_> = self.threads.lock().unwrap().drain(..).collect();
        for h in hs {
            let _ = h.join();
        }
    }
}

impl Drop for JobRunner {
    fn drop(&mut self) {
        if let Some(id) = self.running() {
            let _ = self.cancel(id);
        }
        self.join();
    }
}

/// How a spawned agent paces its loop.
#[derive(Clone)]
pub enum Clock {
    /// Sleep to a wall-clock period of `period · scale` seconds.
    FreeRunning { scale: f64 },
    /// Wait on a barrier shared with the other agents after publishing and
    /// after advancing.
    Lockstep(Arc<Barrier>),
}

struct LoopShared {
    stop: AtomicBool,
    state: Mutex<RobotState>,
    tick_times: Mutex<Vec<Instant>>,
}

/// Handle to an agent running on its own thread.
pub struct AgentHandle {
    id: AgentId,
    shared: Arc<LoopShared>,
    jobs: JobRunner,
    thread: Option<JoinHandle<Result<u64, RuntimeError>>>,
}

impl AgentHandle {
    pub fn id(&self) -> AgentId {
        self.id
    }

    pub fn is_running(&self) -> bool {
        self.thread.as_ref().is_some_and(|t| !t.is_finished())
    }

    pub fn state(&self) -> RobotState {
        self.shared.state.lock().unwrap().clone()
    }

    pub fn jobs(&self) -> &JobRunner {
        &self.jobs
    }

    /// Wall-clock instants at which each tick finished.
    pub fn tick_times(&self) -> Vec<Instant> {
        self.shared.tick_times.lock().unwrap().clone()
    }

    /// Ask the loop to exit after the current tick.
    pub fn request_stop(&self) {
        self.shared.stop.store(true, Ordering::Release);
    }

    /// Stop and join; returns the number of ticks run.
    pub fn stop(mut self) -> Result<u64, RuntimeError> {
        self.request_stop();
        self.join()
    }

    /// Join without requesting a stop (for loops bounded by `max_ticks`).
    pub fn join(&mut self) -> Result<u64, RuntimeError> {
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| RuntimeError::Panicked)?,
            None => Ok(0),
        }
    }
}

/// Start `spec` on its own thread. `max_ticks` bounds the loop; the loop
/// also exits on [`AgentHandle::request_stop`].
pub fn spawn_agent(
    spec: AgentSpec,
    policy: CommPolicy,
    bus: &Bus,
    clock: Clock,
    max_ticks: Option<u64>,
) -> Result<AgentHandle, RuntimeError> {
    let mut core = AgentCore::new(spec, policy, bus)?;
    let id = core.id();
    let shared = Arc::new(LoopShared {
        stop: AtomicBool::new(false),
        state: Mutex::new(core.state().clone()),
        tick_times: Mutex::new(Vec::new()),
    });
    let sh = shared.clone();
    let thread = thread::spawn(move || -> Result<u64, RuntimeError> {
        let period = Duration::from_secs_f64(core.spec().period);
        let mut next = Instant::now();
        let mut ticks = 0;
        while max_ticks.map_or(true, |m| ticks < m) {
            if let Clock::FreeRunning { .. } = clock {
                if sh.stop.load(Ordering::Acquire) {
                    break;
                }
            }
            core.publish()?;
            if let Clock::Lockstep(b) = &clock {
                b.wait();
            }
            core.advance()?;
            ticks += 1;
            *sh.state.lock().unwrap() = core.state().clone();
            sh.tick_times.lock().unwrap().push(Instant::now());
            match &clock {
                Clock::Lockstep(b) => {
                    b.wait();
                }
                Clock::FreeRunning { scale } => {
                    next += period.mul_f64(*scale);
                    let now = Instant::now();
                    if next > now {
                        thread::sleep(next - now);
                    } else {
                        next = now;
                    }
                }
            }
        }
        Ok(ticks)
    });
    Ok(AgentHandle {
        id,
        shared,
        jobs: JobRunner::new(),
        thread: Some(thread),
    })
}
