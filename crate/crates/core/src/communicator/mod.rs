//! Graph-scoped message exchange over an in-process transport.
//!
//! A [`Bus`] holds one queue per directed link. Each agent owns a
//! [`Communicator`] bound to the bus and to a [`CommPolicy`]; the three
//! policies (static, time-varying, best-effort) are configurations of the
//! same engine:
//!
//! | profile       | time varying | sync receive | async receive | reliable |
//! |---------------|--------------|--------------|---------------|----------|
//! | static        |              | yes          | yes           | yes      |
//! | time-varying  | yes          | yes          | yes           | yes      |
//! | best-effort   | yes          |              | yes           |          |
//!
//! Reliable links are unbounded FIFO queues. Best-effort links default to a
//! depth-1 mailbox where the newest message replaces older ones.

pub mod codec;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use codec::{decode, encode, CodecError, Payload};

use crate::netgraph::{neighbor_sets, AgentId, CommGraph, EdgeSchedule};

const ENVELOPE_HEADER: usize = 4 + 8 + 8;
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CommError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("agent {from} → {to} is not an edge of the communication graph")]
    Topology { from: AgentId, to: AgentId },
    #[error("timed out waiting for round {round} from {missing:?}")]
    Timeout { missing: Vec<AgentId>, round: u64 },
    #[error("{0} is not supported by this communicator profile")]
    Unsupported(&'static str),
    #[error("agent {0} is already registered on the bus")]
    Duplicate(AgentId),
    #[error("invalid transport configuration: {0}")]
    Config(String),
}

/// A message in flight: header plus the encoded payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub sender: AgentId,
    pub round: u64,
    /// Simulated time at which the message was sent, seconds.
    pub sent_at: f64,
    pub payload: Vec<u8>,
}

impl Envelope {
    /// `sender u32 LE | round u64 LE | sent_at f64 LE | payload`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ENVELOPE_HEADER + self.payload.len());
        out.extend_from_slice(&(self.sender as u32).to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.sent_at.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CodecError> {
        if b.len() < ENVELOPE_HEADER {
            return Err(CodecError::Malformed {
                offset: b.len(),
                reason: "envelope shorter than its header".into(),
            });
        }
        Ok(Self {
            sender: u32::from_le_bytes(b[0..4].try_into().unwrap()) as AgentId,
            round: u64::from_le_bytes(b[4..12].try_into().unwrap()),
            sent_at: f64::from_le_bytes(b[12..20].try_into().unwrap()),
            payload: b[20..].to_vec(),
        })
    }

    pub fn decode(&self) -> Result<Payload, CodecError> {
        decode(&self.payload)
    }
}

/// Per-message delay model, in simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Latency {
    Fixed(f64),
    Uniform { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportConfig {
    pub drop_prob: f64,
    pub latency: Latency,
    pub rng_seed: u64,
    /// Pending messages kept per link; `None` is unbounded. When full the
    /// oldest message is discarded.
    pub mailbox_depth: Option<usize>,
    /// Wall-clock bound for blocking receives.
    pub recv_timeout: Duration,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            drop_prob: 0.0,
            latency: Latency::Fixed(0.0),
            rng_seed: 0,
            mailbox_depth: None,
            recv_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Static,
    TimeVarying,
    BestEffort,
}

impl Profile {
    pub fn is_reliable(self) -> bool {
        !matches!(self, Profile::BestEffort)
    }
}

/// Communicator behavior: which edges exist per round and how the link behaves.
#[derive(Debug, Clone)]
pub struct CommPolicy {
    pub profile: Profile,
    pub schedule: EdgeSchedule,
    pub transport: TransportConfig,
}

impl CommPolicy {
    pub fn static_graph(graph: CommGraph) -> Self {
        Self {
            profile: Profile::Static,
            schedule: EdgeSchedule::Fixed(graph),
            transport: TransportConfig::default(),
        }
    }

    pub fn time_varying(schedule: EdgeSchedule) -> Self {
        Self {
            profile: Profile::TimeVarying,
            schedule,
            transport: TransportConfig::default(),
        }
    }

    /// Lossy, async-only profile with a depth-1 mailbox.
    pub fn best_effort(schedule: EdgeSchedule, drop_prob: f64, rng_seed: u64) -> Self {
        Self {
            profile: Profile::BestEffort,
            schedule,
            transport: TransportConfig {
                drop_prob,
                rng_seed,
                mailbox_depth: Some(1),
                ..TransportConfig::default()
            },
        }
    }

    pub fn with_transport(mut self, transport: TransportConfig) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_recv_timeout(mut self, timeout: Duration) -> Self {
        self.transport.recv_timeout = timeout;
        self
    }

    pub fn graph(&self) -> &CommGraph {
        self.schedule.base()
    }

    pub fn validate(&self) -> Result<(), CommError> {
        let t = &self.transport;
        if !(0.0..=1.0).contains(&t.drop_prob) {
            return Err(CommError::Config(format!("drop_prob {} outside [0, 1]", t.drop_prob)));
        }
        if self.profile.is_reliable() && t.drop_prob > 0.0 {
            return Err(CommError::Config("reliable profiles cannot drop messages".into()));
        }
        match t.latency {
            Latency::Fixed(l) if !(l >= 0.0 && l.is_finite()) => {
                return Err(CommError::Config(format!("latency {l} must be finite and ≥ 0")))
            }
            Latency::Uniform { min, max } if !(0.0 <= min && min <= max && max.is_finite()) => {
                return Err(CommError::Config(format!("latency range [{min}, {max}] invalid")))
            }
            _ => {}
        }
        if t.mailbox_depth == Some(0) {
            return Err(CommError::Config("mailbox depth must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
struct Link {
    queue: VecDeque<(f64, Envelope)>,
    last_deliver: f64,
}

#[derive(Debug, Default)]
struct BusState {
    now: f64,
    registered: BTreeSet<AgentId>,
    links: HashMap<(AgentId, AgentId), Link>,
}

/// Counters over the lifetime of a bus.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct BusStats {
    pub posted: u64,
    pub dropped: u64,
    pub delivered: u64,
}

#[derive(Debug, Default)]
struct BusInner {
    state: Mutex<BusState>,
    cv: Condvar,
    posted: AtomicU64,
    dropped: AtomicU64,
    delivered: AtomicU64,
}

/// Shared in-process transport. Cheap to clone.
#[derive(Debug, Clone, Default)]
pub struct Bus {
    inner: Arc<BusInner>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, BusState> {
        self.inner.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn register(&self, id: AgentId) -> Result<(), CommError> {
        if self.lock().registered.insert(id) {
            Ok(())
        } else {
            Err(CommError::Duplicate(id))
        }
    }

    pub fn unregister(&self, id: AgentId) {
        self.lock().registered.remove(&id);
    }

    pub fn is_registered(&self, id: AgentId) -> bool {
        self.lock().registered.contains(&id)
    }

    /// Simulated time, seconds.
    pub fn now(&self) -> f64 {
        self.lock().now
    }

    /// Advance the simulated clock; messages whose delivery time has come
    /// become visible to receivers.
    pub fn set_time(&self, t: f64) {
        self.lock().now = t;
        self.inner.cv.notify_all();
    }

    pub fn stats(&self) -> BusStats {
        BusStats {
            posted: self.inner.posted.load(Ordering::Relaxed),
            dropped: self.inner.dropped.load(Ordering::Relaxed),
            delivered: self.inner.delivered.load(Ordering::Relaxed),
        }
    }

    /// Messages still queued on `from → to`, visible or not.
    pub fn pending(&self, from: AgentId, to: AgentId) -> usize {
        self.lock().links.get(&(from, to)).map_or(0, |l| l.queue.len())
    }

    fn post(&self, to: AgentId, env: Envelope, delay: f64, fifo: bool, depth: Option<usize>) {
        {
            let mut st = self.lock();
            let now = st.now;
            let link = st.links.entry((env.sender, to)).or_default();
            let mut at = now + delay;
            if fifo {
                at = at.max(link.last_deliver);
            }
            link.last_deliver = at;
            link.queue.push_back((at, env));
            if let Some(d) = depth {
                while link.queue.len() > d {
                    link.queue.pop_front();
                }
            }
        }
        self.inner.posted.fetch_add(1, Ordering::Relaxed);
        self.inner.cv.notify_all();
    }

    fn note_drop(&self) {
        self.inner.dropped.fetch_add(1, Ordering::Relaxed);
    }

    fn with_link<T>(
        &self,
        from: AgentId,
        to: AgentId,
        f: impl FnOnce(&mut VecDeque<(f64, Envelope)>, f64) -> Option<T>,
    ) -> Option<T> {
        let mut st = self.lock();
        let now = st.now;
        let out = st.links.get_mut(&(from, to)).and_then(|l| f(&mut l.queue, now));
        if out.is_some() {
            self.inner.delivered.fetch_add(1, Ordering::Relaxed);
        }
        out
    }

    fn pop_oldest(&self, from: AgentId, to: AgentId) -> Option<Envelope> {
        self.with_link(from, to, |q, now| match q.front() {
            Some((at, _)) if *at <= now + TIME_EPS => q.pop_front().map(|(_, e)| e),
            _ => None,
        })
    }

    fn pop_newest(&self, from: AgentId, to: AgentId) -> Option<Envelope> {
        self.with_link(from, to, |q, now| {
            let visible = q.iter().take_while(|(at, _)| *at <= now + TIME_EPS).count();
            if visible == 0 {
                return None;
            }
            let mut taken: Vec<_> = q.drain(..visible).collect();
            taken.pop().map(|(_, e)| e)
        })
    }

    /// First visible envelope tagged `round`; visible envelopes of older
    /// rounds ahead of it are discarded as stale.
    fn pop_round(&self, from: AgentId, to: AgentId, round: u64) -> Option<Envelope> {
        self.with_link(from, to, |q, now| {
            while let Some((at, e)) = q.front() {
                if *at > now + TIME_EPS || e.round > round {
                    return None;
                }
                if e.round == round {
                    return q.pop_front().map(|(_, e)| e);
                }
                q.pop_front();
            }
            None
        })
    }

    /// Block until `poll` yields or the wall-clock deadline passes.
    fn wait_for<T>(&self, deadline: Instant, mut poll: impl FnMut() -> Option<T>) -> Option<T> {
        loop {
            if let Some(v) = poll() {
                return Some(v);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            let st = self.lock();
            // Bounded wait: a notification may slip in between poll and lock.
            let step = (deadline - now).min(Duration::from_millis(5));
            let _unused = self.inner.cv.wait_timeout(st, step);
        }
    }
}

/// Per-agent endpoint on a [`Bus`]. Owned by exactly one agent.
#[derive(Debug)]
pub struct Communicator {
    id: AgentId,
    policy: CommPolicy,
    bus: Bus,
    in_neighbors: Vec<AgentId>,
    out_neighbors: Vec<AgentId>,
    link_rngs: HashMap<AgentId, ChaCha8Rng>,
}

impl Drop for Communicator {
    fn drop(&mut self) {
        self.bus.unregister(self.id);
    }
}

impl Communicator {
    pub fn new(id: AgentId, policy: CommPolicy, bus: &Bus) -> Result<Self, CommError> {
        policy.validate()?;
        let (in_neighbors, out_neighbors) = neighbor_sets(policy.graph(), id)
            .map_err(|e| CommError::Config(e.to_string()))?;
        bus.register(id)?;
        Ok(Self {
            id,
            policy,
            bus: bus.clone(),
            in_neighbors,
            out_neighbors,
            link_rngs: HashMap::new(),
        })
    }

    pub fn id(&self) -> AgentId {
        self.id
    }

    pub fn policy(&self) -> &CommPolicy {
        &self.policy
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn in_neighbors(&self) -> &[AgentId] {
        &self.in_neighbors
    }

    pub fn out_neighbors(&self) -> &[AgentId] {
        &self.out_neighbors
    }

    fn link_rng(&mut self, to: AgentId) -> &mut ChaCha8Rng {
        let (seed, from) = (self.policy.transport.rng_seed, self.id as u64);
        self.link_rngs.entry(to).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((from << 32) | to as u64);
            rng
        })
    }

    /// Enqueue `v` once per recipient. Recipients must be out-neighbors in
    /// the base graph; edges inactive at `round` are skipped silently.
    /// Returns the number of envelopes actually posted.
    pub fn send(&mut self, v: &Payload, to: &[AgentId], round: u64) -> Result<usize, CommError> {
        if let Some(&bad) = to.iter().find(|&&j| !self.policy.graph().has_edge(self.id, j)) {
            return Err(CommError::Topology {
                from: self.id,
                to: bad,
            });
        }
        if to.is_empty() {
            return Ok(0);
        }
        let bytes = encode(v)?;
        let sent_at = self.bus.now();
        let t = self.policy.transport.clone();
        let reliable = self.policy.profile.is_reliable();
        let mut posted = 0;
        for &j in to {
            if !self.policy.schedule.is_active(self.id, j, round) {
                continue;
            }
            let rng = self.link_rng(j);
            // Always draw both numbers so the stream does not depend on the outcome.
            let drop_draw: f64 = rng.gen();
            let delay = match t.latency {
                Latency::Fixed(l) => l,
                Latency::Uniform { min, max } => min + (max - min) * rng.gen::<f64>(),
            };
            if drop_draw < t.drop_prob {
                self.bus.note_drop();
                continue;
            }
            let env = Envelope {
                sender: self.id,
                round,
                sent_at,
                payload: bytes.clone(),
            };
            self.bus.post(j, env, delay, reliable, t.mailbox_depth);
            posted += 1;
        }
        Ok(posted)
    }

    fn check_in(&self, from: AgentId) -> Result<(), CommError> {
        if self.policy.graph().has_edge(from, self.id) {
            Ok(())
        } else {
            Err(CommError::Topology { from, to: self.id })
        }
    }

    /// Blocking receive of the `round` message from `from`. Reliable profiles only.
    pub fn receive(
        &mut self,
        from: AgentId,
        round: u64,
        timeout: Duration,
    ) -> Result<Payload, CommError> {
        if !self.policy.profile.is_reliable() {
            return Err(CommError::Unsupported("synchronous receive"));
        }
        self.check_in(from)?;
        let deadline = Instant::now() + timeout;
        let (bus, id) = (self.bus.clone(), self.id);
        match bus.wait_for(deadline, || bus.pop_round(from, id, round)) {
            Some(env) => Ok(env.decode()?),
            None => Err(CommError::Timeout {
                missing: vec![from],
                round,
            }),
        }
    }

    /// Non-blocking. Reliable profiles pop the oldest pending message (FIFO);
    /// best-effort returns the newest and discards the rest.
    pub fn asynchronous_receive(&mut self, from: AgentId) -> Result<Option<Payload>, CommError> {
        Ok(self.asynchronous_receive_envelope(from)?.map(|e| e.decode()).transpose()?)
    }

    pub fn asynchronous_receive_envelope(
        &mut self,
        from: AgentId,
    ) -> Result<Option<Envelope>, CommError> {
        self.check_in(from)?;
        Ok(if self.policy.profile.is_reliable() {
            self.bus.pop_oldest(from, self.id)
        } else {
            self.bus.pop_newest(from, self.id)
        })
    }

    /// Send phase of [`Self::neighbors_exchange`].
    pub fn exchange_send(
        &mut self,
        v: &Payload,
        out_n: &[AgentId],
        round: u64,
    ) -> Result<usize, CommError> {
        self.send(v, out_n, round)
    }

    /// Gather phase of [`Self::neighbors_exchange`]. Reliable profiles wait
    /// (up to the transport's `recv_timeout`) for one `round`-tagged message
    /// per in-neighbor whose edge is active this round; best-effort takes
    /// whatever is available.
    pub fn exchange_collect(
        &mut self,
        in_n: &[AgentId],
        round: u64,
    ) -> Result<BTreeMap<AgentId, Payload>, CommError> {
        let mut out = BTreeMap::new();
        for &j in in_n {
            self.check_in(j)?;
        }
        if !self.policy.profile.is_reliable() {
            for &j in in_n {
                if let Some(env) = self.bus.pop_newest(j, self.id) {
                    out.insert(j, env.decode()?);
                }
            }
            return Ok(out);
        }
        let expected: Vec<AgentId> = in_n
            .iter()
            .copied()
            .filter(|&j| self.policy.schedule.is_active(j, self.id, round))
            .collect();
        let deadline = Instant::now() + self.policy.transport.recv_timeout;
        let (bus, id) = (self.bus.clone(), self.id);
        let mut missing: Vec<AgentId> = Vec::new();
        for &j in &expected {
            match bus.wait_for(deadline, || bus.pop_round(j, id, round)) {
                Some(env) => {
                    out.insert(j, env.decode()?);
                }
                None => missing.push(j),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(CommError::Timeout { missing, round })
        }
    }

    /// Send `v` to `out_n`, then gather one payload per in-neighbor.
    pub fn neighbors_exchange(
        &mut self,
        v: &Payload,
        in_n: &[AgentId],
        out_n: &[AgentId],
        round: u64,
    ) -> Result<BTreeMap<AgentId, Payload>, CommError> {
        self.exchange_send(v, out_n, round)?;
        self.exchange_collect(in_n, round)
    }
}
