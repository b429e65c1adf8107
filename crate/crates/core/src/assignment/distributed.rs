//! The distributed simplex protocol: per-agent state machine, a
//! deterministic lockstep driver, and a free-running per-thread driver.
//!
//! Each round an agent broadcasts its basis, merges what its in-neighbors
//! sent into its column pool and re-optimizes. An agent considers itself
//! halted once its basis has not changed for `2·D` exchange rounds (`D` a
//! bound on the graph diameter) and every in-neighbor has, within that
//! window, sent the same basis. An exchange round only counts once every
//! unfinished in-neighbor has got a message through, so lost messages and
//! slow threads stretch the window instead of shortening it. When every agent is halted at once, neighboring bases
//! agree on a connected graph, so all agents hold one basis that prices out
//! every column and is therefore the optimum.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use super::{local_columns, simplex_round, AssignmentError, ColumnKey, SimplexBasis, SimplexColumn};
use crate::communicator::{Bus, CommPolicy, Communicator, Payload};
use crate::netgraph::{is_connected, AgentId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexConfig {
    /// Bound on the graph diameter; `None` uses `N − 1`.
    pub diameter_bound: Option<usize>,
    /// Round budget; `None` uses `50·N`.
    pub max_rounds: Option<usize>,
    /// Cost of the artificial starting columns. Must dominate any matching cost.
    pub big_m: f64,
    /// Pause between rounds of the best-effort threaded driver.
    pub poll_interval: Duration,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            diameter_bound: None,
            max_rounds: None,
            big_m: 1e6,
            poll_interval: Duration::from_millis(2),
        }
    }
}

impl SimplexConfig {
    pub fn window(&self, n: usize) -> usize {
        (2 * self.diameter_bound.unwrap_or(n.saturating_sub(1))).max(1)
    }

    pub fn budget(&self, n: usize) -> usize {
        self.max_rounds.unwrap_or(50 * n)
    }
}

#[derive(Debug, Clone)]
struct Heard {
    /// Own round counter when the message arrived.
    at: u64,
    keys: Vec<ColumnKey>,
    /// Matching the sender's basis encoded, if any.
    matching: Option<Vec<usize>>,
    halted: bool,
    done: bool,
}

/// Protocol state of one robot.
#[derive(Debug, Clone)]
pub struct SimplexAgent {
    id: AgentId,
    n: usize,
    own: Vec<SimplexColumn>,
    basis: SimplexBasis,
    in_neighbors: Vec<AgentId>,
    window: usize,
    round: u64,
    unchanged: usize,
    /// In-neighbors heard from since `unchanged` last moved.
    fresh: BTreeSet<AgentId>,
    inbox: Vec<SimplexColumn>,
    heard: BTreeMap<AgentId, Heard>,
    objectives: Vec<f64>,
}

impl SimplexAgent {
    pub fn new(
        id: AgentId,
        costs: &[f64],
        in_neighbors: Vec<AgentId>,
        cfg: &SimplexConfig,
    ) -> Result<Self, AssignmentError> {
        let n = costs.len();
        if n == 0 || id >= n {
            return Err(AssignmentError::Input(format!("agent {id} with {n} costs")));
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(AssignmentError::Input(format!("non-finite cost for agent {id}")));
        }
        let basis = SimplexBasis::artificial(n, cfg.big_m);
        Ok(Self {
            id,
            n,
            own: local_columns(id, costs, n),
            objectives: vec![basis.objective],
            basis,
            in_neighbors,
            window: cfg.window(n),
            round: 0,
            unchanged: 0,
            fresh: BTreeSet::new(),
            inbox: Vec::new(),
            heard: BTreeMap::new(),
        })
    }

    pub fn id(&self) -> AgentId {
        self.id
    }

    pub fn basis(&self) -> &SimplexBasis {
        &self.basis
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Basis objective after each round, starting with the artificial basis.
    pub fn objectives(&self) -> &[f64] {
        &self.objectives
    }

    /// Task currently assigned to this robot by its own basis.
    pub fn task(&self) -> Option<usize> {
        self.basis.permutation().map(|p| p[self.id])
    }

    pub fn message(&self, done: bool) -> Payload {
        let mut data = Vec::with_capacity(3 * self.basis.columns.len());
        for c in &self.basis.columns {
            let (a, b) = match c.key {
                ColumnKey::Real { robot, task } => (robot as f64, task as f64),
                ColumnKey::Artificial { row } => (-1.0, row as f64),
            };
            data.extend([a, b, c.cost]);
        }
        Payload::map([
            ("round", Payload::Int(self.round as i64)),
            ("halted", Payload::Bool(self.is_halted())),
            ("done", Payload::Bool(done)),
            ("basis", Payload::Matrix { rows: self.basis.columns.len(), cols: 3, data }),
            (
                "acks",
                Payload::Vector(self.heard.iter().filter(|(_, h)| h.done).map(|(&j, _)| j as f64).collect()),
            ),
            (
                "matching",
                Payload::Vector(self.basis.permutation().unwrap_or_default().iter().map(|&k| k as f64).collect()),
            ),
        ])
    }

    fn parse(
        &self,
        p: &Payload,
    ) -> Result<(Vec<SimplexColumn>, Option<Vec<usize>>, bool, bool), AssignmentError> {
        let bad = |what: &str| AssignmentError::Protocol(format!("simplex message: {what}"));
        let halted = p.get("halted").and_then(Payload::as_bool).ok_or_else(|| bad("halted"))?;
        let done = p.get("done").and_then(Payload::as_bool).ok_or_else(|| bad("done"))?;
        let (rows, cols, data) = p.get("basis").and_then(Payload::as_matrix).ok_or_else(|| bad("basis"))?;
        if cols != 3 || rows != 2 * self.n - 1 {
            return Err(bad("basis shape"));
        }
        let index = |v: f64| (v >= 0.0 && v.fract() == 0.0).then_some(v as usize);
        let matching = p.get("matching").and_then(Payload::as_vector).ok_or_else(|| bad("matching"))?;
        let matching = match matching.len() {
            0 => None,
            len if len == self.n => Some(
                matching
                    .iter()
                    .map(|&v| index(v).filter(|&k| k < self.n))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad("matching entry"))?,
            ),
            _ => return Err(bad("matching length")),
        };
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let (a, b, cost) = (data[3 * r], data[3 * r + 1], data[3 * r + 2]);
            let key = match (a, index(b)) {
                (a, Some(row)) if a == -1.0 => ColumnKey::Artificial { row },
                (a, Some(task)) => ColumnKey::Real {
                    robot: index(a).ok_or_else(|| bad("robot index"))?,
                    task,
                },
                _ => return Err(bad("column index")),
            };
            let col = match key {
                ColumnKey::Real { robot, task } if robot < self.n && task < self.n => {
                    SimplexColumn::real(self.n, robot, task, cost)
                }
                ColumnKey::Artificial { row } if row < rows => SimplexColumn::artificial(self.n, row, cost),
                _ => return Err(bad("index out of range")),
            };
            col.validate(self.n)?;
            out.push(col);
        }
        Ok((out, matching, halted, done))
    }

    /// Queue a neighbor's basis for the next round. A malformed message is
    /// rejected and leaves the state untouched.
    pub fn absorb(&mut self, from: AgentId, p: &Payload) -> Result<(), AssignmentError> {
        let (cols, matching, halted, done) = self.parse(p)?;
        self.heard.insert(
            from,
            Heard {
                at: self.round,
                keys: cols.iter().map(|c| c.key).collect(),
                matching,
                halted,
                done,
            },
        );
        self.inbox.extend(cols);
        self.fresh.insert(from);
        Ok(())
    }

    /// Re-optimize over basis, own and queued columns.
    pub fn advance(&mut self) -> Result<(), AssignmentError> {
        let inbox = std::mem::take(&mut self.inbox);
        let next = simplex_round(&self.basis, &self.own, &inbox)?;
        if next.keys() != self.basis.keys() {
            self.unchanged = 0;
            self.fresh.clear();
        } else if self.in_neighbors.iter().all(|j| self.fresh.contains(j) || self.neighbor_done(*j)) {
            self.unchanged += 1;
            self.fresh.clear();
        }
        self.basis = next;
        self.round += 1;
        self.objectives.push(self.basis.objective);
        Ok(())
    }

    pub fn is_halted(&self) -> bool {
        if self.unchanged < self.window {
            return false;
        }
        let keys = self.basis.keys();
        let matching = self.basis.permutation();
        self.in_neighbors.iter().all(|j| match self.heard.get(j) {
            // A finished neighbor can stop on a different degenerate basis
            // of the same vertex; its matching is what has to agree.
            Some(h) if h.done => h.keys == keys || (matching.is_some() && h.matching == matching),
            Some(h) => h.keys == keys && h.at + self.window as u64 >= self.round,
            None => false,
        })
    }

    /// Halted, and every in-neighbor reported itself halted on the same basis.
    pub fn neighbors_settled(&self) -> bool {
        self.is_halted()
            && self
                .in_neighbors
                .iter()
                .all(|j| self.heard.get(j).is_some_and(|h| h.halted || h.done))
    }

    pub fn neighbor_done(&self, j: AgentId) -> bool {
        self.heard.get(&j).is_some_and(|h| h.done)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexRun {
    /// Consensual robot → task matching.
    pub permutation: Vec<usize>,
    pub cost: f64,
    pub rounds: usize,
    /// Each agent's matching at halt.
    pub per_agent: Vec<Vec<usize>>,
    /// Each agent's basis objective per round.
    pub objectives: Vec<Vec<f64>>,
}

fn diagnostic(agents: &[SimplexAgent]) -> String {
    agents
        .iter()
        .map(|a| {
            format!(
                "agent {}: objective {:.6}, unchanged {}, halted {}",
                a.id,
                a.basis.objective,
                a.unchanged,
                a.is_halted()
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Run the protocol for all agents in one thread, one synchronized round at
/// a time. Deterministic for a given policy and cost matrix.
pub fn lockstep_distributed_simplex(
    costs: &[Vec<f64>],
    policy: &CommPolicy,
    cfg: &SimplexConfig,
) -> Result<SimplexRun, AssignmentError> {
    let n = costs.len();
    if n == 0 || costs.iter().any(|r| r.len() != n) {
        return Err(AssignmentError::Input("cost matrix must be square and non-empty".into()));
    }
    if policy.graph().n() != n {
        return Err(AssignmentError::Input(format!("graph has {} nodes for {n} robots", policy.graph().n())));
    }
    if !is_connected(policy.graph()) {
        return Err(AssignmentError::Input("communication graph is not connected".into()));
    }
    let bus = Bus::new();
    let mut comms = (0..n)
        .map(|i| Communicator::new(i, policy.clone(), &bus))
        .collect::<Result<Vec<_>, _>>()?;
    let mut agents = (0..n)
        .map(|i| SimplexAgent::new(i, &costs[i], comms[i].in_neighbors().to_vec(), cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let budget = cfg.budget(n);
    for r in 0..budget as u64 {
        bus.set_time(r as f64);
        for (c, a) in comms.iter_mut().zip(&agents) {
            let outs = c.out_neighbors().to_vec();
            c.exchange_send(&a.message(false), &outs, r)?;
        }
        for (c, a) in comms.iter_mut().zip(agents.iter_mut()) {
            let ins = c.in_neighbors().to_vec();
            for (j, p) in c.exchange_collect(&ins, r)? {
                // a malformed message is dropped; the agent keeps its state
                let _ = a.absorb(j, &p);
            }
            a.advance()?;
        }
        if agents.iter().all(SimplexAgent::is_halted) {
            let per_agent = agents
                .iter()
                .map(|a| a.basis.permutation())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| AssignmentError::NonConvergence {
                    rounds: r as usize + 1,
                    detail: format!("halted on a non-matching basis: {}", diagnostic(&agents)),
                })?;
            let cost = agents[0].basis.assignment_cost().unwrap_or(f64::NAN);
            return Ok(SimplexRun {
                permutation: per_agent[0].clone(),
                cost,
                rounds: r as usize + 1,
                per_agent,
                objectives: agents.iter().map(|a| a.objectives.clone()).collect(),
            });
        }
    }
    Err(AssignmentError::NonConvergence {
        rounds: budget,
        detail: diagnostic(&agents),
    })
}

/// Free-running driver for one robot on its own thread. Reliable profiles
/// synchronize rounds through tagged receives; best-effort profiles poll.
/// Returns this robot's task and the cost of the agreed matching.
pub fn run_distributed_simplex(
    comm: &mut Communicator,
    costs: &[f64],
    n: usize,
    cfg: &SimplexConfig,
) -> Result<(usize, f64), AssignmentError> {
    if costs.len() != n {
        return Err(AssignmentError::Input(format!("{} costs for {n} tasks", costs.len())));
    }
    let id = comm.id();
    let ins = comm.in_neighbors().to_vec();
    let outs = comm.out_neighbors().to_vec();
    let reliable = comm.policy().profile.is_reliable();
    let schedule = comm.policy().schedule.clone();
    let timeout = comm.policy().transport.recv_timeout;
    let mut agent = SimplexAgent::new(id, costs, ins.clone(), cfg)?;
    let budget = cfg.budget(n) as u64;
    loop {
        let r = agent.round();
        if r >= budget {
            return Err(AssignmentError::NonConvergence {
                rounds: r as usize,
                detail: diagnostic(std::slice::from_ref(&agent)),
            });
        }
        if agent.neighbors_settled() {
            if reliable {
                comm.send(&agent.message(true), &outs, r)?;
            } else {
                // any single copy may be lost: send at least a window's worth
                // and keep going until every neighbor has either finished or
                // confirmed it heard this one
                let mut acked: BTreeMap<AgentId, bool> = ins.iter().map(|&j| (j, agent.neighbor_done(j))).collect();
                for k in r..budget {
                    comm.send(&agent.message(true), &outs, k)?;
                    std::thread::sleep(cfg.poll_interval);
                    for (&j, seen) in acked.iter_mut().filter(|(_, s)| !**s) {
                        if let Some(p) = comm.asynchronous_receive(j)? {
                            let _ = agent.absorb(j, &p);
                            *seen = agent.neighbor_done(j)
                                || p.get("acks").and_then(Payload::as_vector).is_some_and(|a| a.contains(&(id as f64)));
                        }
                    }
                    if k + 1 >= r + agent.window as u64 && acked.values().all(|&s| s) {
                        break;
                    }
                }
            }
            let task = agent.task().ok_or_else(|| AssignmentError::NonConvergence {
                rounds: r as usize,
                detail: "halted on a non-matching basis".into(),
            })?;
            return Ok((task, agent.basis.assignment_cost().unwrap_or(f64::NAN)));
        }
        comm.send(&agent.message(false), &outs, r)?;
        for &j in &ins {
            if agent.neighbor_done(j) {
                continue;
            }
            if reliable {
                if schedule.is_active(j, id, r) {
                    let p = comm.receive(j, r, timeout)?;
                    let _ = agent.absorb(j, &p);
                }
            } else if let Some(p) = comm.asynchronous_receive(j)? {
                let _ = agent.absorb(j, &p);
            }
        }
        agent.advance()?;
        if !reliable {
            std::thread::sleep(cfg.poll_interval);
        }
    }
}

/// Convenience for tests and examples: a fresh bus and one thread per robot.
pub fn threaded_distributed_simplex(
    costs: &[Vec<f64>],
    policy: &CommPolicy,
    cfg: &SimplexConfig,
) -> Result<Vec<(usize, f64)>, AssignmentError> {
    let n = costs.len();
    let bus = Bus::new();
    let comms = (0..n)
        .map(|i| Communicator::new(i, policy.clone(), &bus))
        .collect::<Result<Vec<_>, _>>()?;
    let handles: Vec<_> = comms
        .into_iter()
        .zip(costs.iter().cloned())
        .map(|(mut c, row)| {
            let cfg = *cfg;
            std::thread::spawn(move || run_distributed_simplex(&mut c, &row, n, &cfg))
        })
        .collect();
    handles
        .into_iter()
        .map(|h| h.join().map_err(|_| AssignmentError::Protocol("agent thread panicked".into()))?)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{hungarian, AssignmentProblem};
    use crate::netgraph::{erdos_renyi_connected, CommGraph, EdgeSchedule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_costs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..n).map(|_| rng.gen::<f64>()).collect()).collect()
    }

    fn oracle(costs: &[Vec<f64>]) -> (Vec<usize>, f64) {
        hungarian(&AssignmentProblem::new(costs.to_vec()).unwrap())
    }

    #[test]
    fn single_robot_gets_task_zero() {
        let run = lockstep_distributed_simplex(
            &[vec![3.0]],
            &CommPolicy::static_graph(CommGraph::empty(1)),
            &SimplexConfig::default(),
        )
        .unwrap();
        assert_eq!(run.permutation, vec![0]);
        assert_eq!(run.cost, 3.0);
    }

    #[test]
    fn path_graph_identity() {
        let costs = vec![vec![0.0, 5.0, 5.0], vec![5.0, 0.0, 5.0], vec![5.0, 5.0, 0.0]];
        let g = CommGraph::from_undirected_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let run = lockstep_distributed_simplex(&costs, &CommPolicy::static_graph(g), &SimplexConfig::default())
            .unwrap();
        assert_eq!(run.permutation, vec![0, 1, 2]);
        assert_eq!(run.cost, 0.0);
        assert!(run.per_agent.iter().all(|p| p == &run.permutation));
    }

    #[test]
    fn sparse_random_graphs_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..100 {
            let costs = random_costs(&mut rng, 4);
            let g = erdos_renyi_connected(4, 0.2, seed).unwrap();
            let run = lockstep_distributed_simplex(&costs, &CommPolicy::static_graph(g), &SimplexConfig::default())
                .unwrap();
            let (perm, best) = oracle(&costs);
            assert_eq!(run.permutation, perm, "seed {seed}");
            assert_eq!(run.cost, best);
            for obj in &run.objectives {
                assert!(obj.windows(2).all(|w| w[1] <= w[0] + 1e-9));
            }
        }
    }

    #[test]
    fn lossy_links_still_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..30 {
            let costs = random_costs(&mut rng, 4);
            let g = erdos_renyi_connected(4, 0.2, seed).unwrap();
            let policy = CommPolicy::best_effort(EdgeSchedule::Fixed(g), 0.3, seed);
            let run = lockstep_distributed_simplex(&costs, &policy, &SimplexConfig::default()).unwrap();
            assert_eq!(run.permutation, oracle(&costs).0);
        }
    }

    #[test]
    fn threaded_reliable_agents_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..5 {
            let costs = random_costs(&mut rng, 4);
            let g = erdos_renyi_connected(4, 0.3, seed).unwrap();
            let out = threaded_distributed_simplex(&costs, &CommPolicy::static_graph(g), &SimplexConfig::default())
                .unwrap();
            let (perm, best) = oracle(&costs);
            for (i, (task, cost)) in out.iter().enumerate() {
                assert_eq!(*task, perm[i]);
                assert_eq!(*cost, best);
            }
        }
    }

    #[test]
    fn threaded_best_effort_agents_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let costs = random_costs(&mut rng, 3);
        let policy = CommPolicy::best_effort(EdgeSchedule::Fixed(CommGraph::complete(3)), 0.2, 1);
        let cfg = SimplexConfig {
            max_rounds: Some(2000),
            ..SimplexConfig::default()
        };
        let out = threaded_distributed_simplex(&costs, &policy, &cfg).unwrap();
        let perm = oracle(&costs).0;
        for (i, (task, _)) in out.iter().enumerate() {
            assert_eq!(*task, perm[i]);
        }
    }

    #[test]
    fn malformed_message_keeps_state() {
        let cfg = SimplexConfig::default();
        let mut a = SimplexAgent::new(0, &[1.0, 2.0], vec![1], &cfg).unwrap();
        let before = a.clone().basis;
        assert!(a.absorb(1, &Payload::Int(3)).is_err());
        let mut msg = SimplexAgent::new(1, &[1.0, 2.0], vec![0], &cfg).unwrap().message(false);
        if let Payload::Map(m) = &mut msg {
            m.insert("basis".into(), Payload::matrix(3, 3, vec![9.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0]));
        }
        assert!(a.absorb(1, &msg).is_err());
        assert_eq!(a.basis, before);
        assert!(a.heard.is_empty() && a.inbox.is_empty());
    }

    #[test]
    fn silent_neighbor_holds_the_window_open() {
        let cfg = SimplexConfig::default();
        let mut a = SimplexAgent::new(0, &[1.0, 2.0], vec![1], &cfg).unwrap();
        let mut b = SimplexAgent::new(1, &[2.0, 1.0], vec![0], &cfg).unwrap();
        for _ in 0..10 {
            let (ma, mb) = (a.message(false), b.message(false));
            a.absorb(1, &mb).unwrap();
            b.absorb(0, &ma).unwrap();
            a.advance().unwrap();
            b.advance().unwrap();
        }
        assert!(a.is_halted() && b.is_halted());
        let settled = a.unchanged;
        for _ in 0..20 {
            a.advance().unwrap();
        }
        assert_eq!(a.unchanged, settled);
        a.absorb(1, &b.message(false)).unwrap();
        a.advance().unwrap();
        assert_eq!(a.unchanged, settled + 1);
    }

    #[test]
    fn finished_neighbor_is_matched_on_its_assignment() {
        let cfg = SimplexConfig::default();
        let mut a = SimplexAgent::new(0, &[1.0, 2.0], vec![1], &cfg).unwrap();
        let mut b = SimplexAgent::new(1, &[2.0, 1.0], vec![0], &cfg).unwrap();
        for _ in 0..10 {
            let (ma, mb) = (a.message(false), b.message(false));
            a.absorb(1, &mb).unwrap();
            b.absorb(0, &ma).unwrap();
            a.advance().unwrap();
            b.advance().unwrap();
        }
        assert_eq!(a.basis.permutation(), Some(vec![0, 1]));
        // swap the zero-valued off-diagonal column for the other one
        let swapped = |mut msg: Payload, matching: Vec<f64>| {
            let Payload::Map(m) = &mut msg else { unreachable!() };
            let Some(Payload::Matrix { data, .. }) = m.get_mut("basis") else { unreachable!() };
            let r = (0..3).find(|&r| data[3 * r] != data[3 * r + 1]).expect("off-diagonal column");
            data.swap(3 * r, 3 * r + 1);
            m.insert("matching".into(), Payload::Vector(matching));
            msg
        };
        let mut c = a.clone();
        c.absorb(1, &swapped(b.message(true), vec![0.0, 1.0])).unwrap();
        assert_ne!(c.heard[&1].keys, c.basis.keys());
        assert!(c.is_halted());
        let mut d = a.clone();
        d.absorb(1, &swapped(b.message(true), vec![1.0, 0.0])).unwrap();
        assert!(!d.is_halted());
    }
}
