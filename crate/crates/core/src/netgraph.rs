//! Communication graphs: dense directed adjacency, per-round edge activation
//! and random graph generation.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Index of an agent within a run, in `0..n`.
pub type AgentId = usize;

/// Resampling cap for [`erdos_renyi_connected`].
pub const MAX_CONNECT_ATTEMPTS: usize = 1000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("agent {agent} out of range for graph of {n} agents")]
    InvalidAgent { agent: AgentId, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no connected sample after {0} attempts")]
    NotConnected(usize),
}

/// Directed graph over `n` agents. Entry `(i, j)` set means `i` sends to `j`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CommGraph {
    n: usize,
    adj: Vec<bool>,
}

impl fmt::Debug for CommGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CommGraph")
            .field("n", &self.n)
            .field("edges", &self.edges())
            .finish()
    }
}

impl CommGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adj: vec![false; n * n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Self::empty(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    g.adj[i * n + j] = true;
                }
            }
        }
        g
    }

    /// Directed edges `(from, to)`. Self-loops are rejected.
    pub fn from_directed_edges(n: usize, edges: &[(AgentId, AgentId)]) -> Result<Self, GraphError> {
        let mut g = Self::empty(n);
        for &(i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    /// Each pair is inserted in both directions.
    pub fn from_undirected_edges(
        n: usize,
        edges: &[(AgentId, AgentId)],
    ) -> Result<Self, GraphError> {
        let mut g = Self::empty(n);
        for &(i, j) in edges {
            g.add_edge(i, j)?;
            g.add_edge(j, i)?;
        }
        Ok(g)
    }

    /// Square 0/1 matrix, row = sender. Diagonal must be zero.
    pub fn from_matrix<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, GraphError> {
        let n = rows.len();
        let mut g = Self::empty(n);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(GraphError::InvalidParameter(format!(
                    "adjacency row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 if i == j => {
                        return Err(GraphError::InvalidParameter(format!(
                            "self-loop at agent {i}"
                        )))
                    }
                    1 => g.adj[i * n + j] = true,
                    other => {
                        return Err(GraphError::InvalidParameter(format!(
                            "adjacency entry ({i},{j}) = {other}, expected 0 or 1"
                        )))
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn check(&self, i: AgentId) -> Result<(), GraphError> {
        if i < self.n {
            Ok(())
        } else {
            Err(GraphError::InvalidAgent {
                agent: i,
                n: self.n,
            })
        }
    }

    pub fn add_edge(&mut self, from: AgentId, to: AgentId) -> Result<(), GraphError> {
        self.check(from)?;
        self.check(to)?;
        if from == to {
            return Err(GraphError::InvalidParameter(format!(
                "self-loop at agent {from}"
            )));
        }
        self.adj[from * self.n + to] = true;
        Ok(())
    }

    /// False for out-of-range indices.
    pub fn has_edge(&self, from: AgentId, to: AgentId) -> bool {
        from < self.n && to < self.n && self.adj[from * self.n + to]
    }

    pub fn edges(&self) -> Vec<(AgentId, AgentId)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.adj[i * self.n + j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count()
    }

    pub fn is_undirected(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.has_edge(i, j) == self.has_edge(j, i)))
    }

    /// 0/1 rows, sender-major.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.has_edge(i, j) as u8).collect())
            .collect()
    }

    /// Edge subset test: every edge of `self` is also in `other`.
    pub fn is_subgraph_of(&self, other: &CommGraph) -> bool {
        self.n == other.n && self.edges().iter().all(|&(i, j)| other.has_edge(i, j))
    }

    /// Union of two graphs over the same agent set.
    pub fn union(&self, other: &CommGraph) -> CommGraph {
        assert_eq!(self.n, other.n, "graph sizes differ");
        CommGraph {
            n: self.n,
            adj: self
                .adj
                .iter()
                .zip(&other.adj)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    /// Number of hops along directed edges from `src` to every agent;
    /// `None` for unreachable agents.
    pub fn hop_distances(&self, src: AgentId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        if src >= self.n {
            return dist;
        }
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for v in 0..self.n {
                if self.adj[u * self.n + v] && dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Longest shortest path, `None` if not strongly connected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for s in 0..self.n {
            for d in self.hop_distances(s) {
                best = best.max(d?);
            }
        }
        Some(best)
    }
}

/// In- and out-neighbors of `i`, both sorted ascending.
pub fn neighbor_sets(
    g: &CommGraph,
    i: AgentId,
) -> Result<(Vec<AgentId>, Vec<AgentId>), GraphError> {
    g.check(i)?;
    let ins = (0..g.n).filter(|&j| g.has_edge(j, i)).collect();
    let outs = (0..g.n).filter(|&j| g.has_edge(i, j)).collect();
    Ok((ins, outs))
}

/// Strong connectivity (plain connectivity for undirected graphs).
pub fn is_connected(g: &CommGraph) -> bool {
    g.diameter().is_some()
}

fn check_prob(p: f64) -> Result<(), GraphError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(GraphError::InvalidParameter(format!(
            "probability {p} outside [0, 1]"
        )))
    }
}

/// Undirected G(n, p): every unordered pair is drawn independently.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<CommGraph, GraphError> {
    if n == 0 {
        return Err(GraphError::InvalidParameter("n must be at least 1".into()));
    }
    check_prob(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_er(n, p, &mut rng))
}

fn sample_er(n: usize, p: f64, rng: &mut ChaCha8Rng) -> CommGraph {
    let mut g = CommGraph::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                g.adj[i * n + j] = true;
                g.adj[j * n + i] = true;
            }
        }
    }
    g
}

/// Like [`erdos_renyi`] but resamples (from the same seeded stream) until the
/// graph is connected, giving up after [`MAX_CONNECT_ATTEMPTS`] draws.
pub fn erdos_renyi_connected(n: usize, p: f64, seed: u64) -> Result<CommGraph, GraphError> {
    if n == 0 {
        return Err(GraphError::InvalidParameter("n must be at least 1".into()));
    }
    check_prob(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_CONNECT_ATTEMPTS {
        let g = sample_er(n, p, &mut rng);
        if is_connected(&g) {
            return Ok(g);
        }
    }
    Err(GraphError::NotConnected(MAX_CONNECT_ATTEMPTS))
}

/// Which edges exist at a given communication round.
#[derive(Clone)]
pub enum EdgeSchedule {
    /// Every edge of the base graph is present at every round.
    Fixed(CommGraph),
    /// i.i.d. per-round activation of base edges. Undirected pairs (both
    /// directions present in `base`) are activated jointly.
    Random {
        base: CommGraph,
        activation_prob: f64,
        rng_seed: u64,
    },
    /// Caller-supplied round → graph function. The returned graph must be a
    /// subgraph of `base`.
    Explicit {
        base: CommGraph,
        graph_at: Arc<dyn Fn(u64) -> CommGraph + Send + Sync>,
    },
}

impl fmt::Debug for EdgeSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(g) => f.debug_tuple("Fixed").field(g).finish(),
            Self::Random {
                base,
                activation_prob,
                rng_seed,
            } => f
                .debug_struct("Random")
                .field("base", base)
                .field("activation_prob", activation_prob)
                .field("rng_seed", rng_seed)
                .finish(),
            Self::Explicit { base, .. } => f.debug_struct("Explicit").field("base", base).finish(),
        }
    }
}

impl EdgeSchedule {
    pub fn random(base: CommGraph, activation_prob: f64, rng_seed: u64) -> Result<Self, GraphError> {
        check_prob(activation_prob)?;
        Ok(Self::Random {
            base,
            activation_prob,
            rng_seed,
        })
    }

    pub fn explicit<F>(base: CommGraph, graph_at: F) -> Self
    where
        F: Fn(u64) -> CommGraph + Send + Sync + 'static,
    {
        Self::Explicit {
            base,
            graph_at: Arc::new(graph_at),
        }
    }

    pub fn base(&self) -> &CommGraph {
        match self {
            Self::Fixed(g) => g,
            Self::Random { base, .. } | Self::Explicit { base, .. } => base,
        }
    }

    /// Whether the edge `from → to` carries traffic at `round`.
    pub fn is_active(&self, from: AgentId, to: AgentId, round: u64) -> bool {
        match self {
            Self::Fixed(g) => g.has_edge(from, to),
            _ => sample_active(self, round).has_edge(from, to),
        }
    }
}

/// Graph active at `round`: deterministic in `(seed, round)` and always an
/// edge subset of the base graph.
pub fn sample_active(s: &EdgeSchedule, round: u64) -> CommGraph {
    match s {
        EdgeSchedule::Fixed(g) => g.clone(),
        EdgeSchedule::Explicit { base, graph_at } => {
            let g = graph_at(round);
            // Clip to the base so the subset contract holds regardless of the callback.
            let mut out = CommGraph::empty(base.n);
            for (i, j) in g.edges() {
                if base.has_edge(i, j) {
                    out.adj[i * base.n + j] = true;
                }
            }
            out
        }
        EdgeSchedule::Random {
            base,
            activation_prob,
            rng_seed,
        } => {
            let n = base.n;
            let mut rng = ChaCha8Rng::seed_from_u64(*rng_seed);
            rng.set_stream(round);
            let mut out = CommGraph::empty(n);
            for i in 0..n {
                for j in (i + 1)..n {
                    let fwd = base.adj[i * n + j];
                    let bwd = base.adj[j * n + i];
                    if fwd && bwd {
                        if rng.gen::<f64>() < *activation_prob {
                            out.adj[i * n + j] = true;
                            out.adj[j * n + i] = true;
                        }
                    } else if fwd || bwd {
                        if rng.gen::<f64>() < *activation_prob {
                            if fwd {
                                out.adj[i * n + j] = true;
                            } else {
                                out.adj[j * n + i] = true;
                            }
                        }
                    }
                }
            }
            out
        }
    }
}

/// Graph description as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    /// Full 0/1 adjacency matrix, row = sender.
    Matrix(Vec<Vec<u8>>),
    /// Edge pairs; `undirected` (default true) inserts both directions.
    Edges {
        pairs: Vec<(AgentId, AgentId)>,
        #[serde(default = "default_true")]
        undirected: bool,
    },
    Complete,
    ErdosRenyi {
        p: f64,
        seed: u64,
        #[serde(default = "default_true")]
        connected: bool,
    },
}

fn default_true() -> bool {
    true
}

impl GraphSpec {
    pub fn build(&self, n: usize) -> Result<CommGraph, GraphError> {
        let g = match self {
            GraphSpec::Matrix(rows) => CommGraph::from_matrix(rows)?,
            GraphSpec::Edges { pairs, undirected } => {
                if *undirected {
                    CommGraph::from_undirected_edges(n, pairs)?
                } else {
                    CommGraph::from_directed_edges(n, pairs)?
                }
            }
            GraphSpec::Complete => CommGraph::complete(n),
            GraphSpec::ErdosRenyi { p, seed, connected } => {
                if *connected {
                    erdos_renyi_connected(n, *p, *seed)?
                } else {
                    erdos_renyi(n, *p, *seed)?
                }
            }
        };
        if g.n() != n {
            return Err(GraphError::InvalidParameter(format!(
                "graph has {} agents, expected {n}",
                g.n()
            )));
        }
        Ok(g)
    }
}
