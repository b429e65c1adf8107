//! Distributed feedback laws and the exchange → evaluate → actuate step.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::communicator::{CommError, Communicator, Payload};
use crate::netgraph::{AgentId, CommGraph};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GuidanceError {
    #[error("formation spec: {0}")]
    Spec(String),
    #[error("neighbor {0} sent a malformed position")]
    BadPosition(AgentId),
    #[error(transparent)]
    Comm(#[from] CommError),
}

/// Per-agent guidance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub agent: AgentId,
    pub is_leader: bool,
    /// Loop period, seconds.
    pub period: f64,
    pub gain: f64,
}

impl GuidanceConfig {
    pub fn new(agent: AgentId) -> Self {
        Self {
            agent,
            is_leader: false,
            period: 0.01,
            gain: 1.0,
        }
    }
}

pub type Neighborhood = BTreeMap<AgentId, Vec<f64>>;

fn zero(dim: usize) -> Vec<f64> {
    vec![0.0; dim]
}

/// `Σ_j (x_j − own)`.
pub fn rendezvous_velocity(own: &[f64], neigh: &Neighborhood) -> Vec<f64> {
    let mut u = zero(own.len());
    for x in neigh.values() {
        for (k, ui) in u.iter_mut().enumerate() {
            *ui += x[k] - own[k];
        }
    }
    u
}

/// Leaders hold still; followers run the gained consensus sum.
pub fn containment_velocity(own: &[f64], neigh: &Neighborhood, is_leader: bool, gain: f64) -> Vec<f64> {
    if is_leader {
        return zero(own.len());
    }
    let mut u = rendezvous_velocity(own, neigh);
    u.iter_mut().for_each(|x| *x *= gain);
    u
}

/// Symmetric set of desired distances `d_ij ≥ 0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<(AgentId, AgentId, f64)>", into = "Vec<(AgentId, AgentId, f64)>")]
pub struct FormationSpec {
    pairs: BTreeMap<(AgentId, AgentId), f64>,
}

impl TryFrom<Vec<(AgentId, AgentId, f64)>> for FormationSpec {
    type Error = GuidanceError;
    fn try_from(v: Vec<(AgentId, AgentId, f64)>) -> Result<Self, Self::Error> {
        Self::from_pairs(&v)
    }
}

impl From<FormationSpec> for Vec<(AgentId, AgentId, f64)> {
    fn from(s: FormationSpec) -> Self {
        s.unordered_pairs()
    }
}

impl FormationSpec {
    /// Each `(i, j, d)` is stored in both directions. A pair listed twice
    /// must carry the same distance.
    pub fn from_pairs(pairs: &[(AgentId, AgentId, f64)]) -> Result<Self, GuidanceError> {
        let mut out = BTreeMap::new();
        for &(i, j, d) in pairs {
            if i == j {
                return Err(GuidanceError::Spec(format!("pair ({i},{i}) is a self-pair")));
            }
            if !(d >= 0.0 && d.is_finite()) {
                return Err(GuidanceError::Spec(format!("d_{i}{j} = {d} must be finite and ≥ 0")));
            }
            for key in [(i, j), (j, i)] {
                if let Some(&prev) = out.get(&key) {
                    if prev != d {
                        return Err(GuidanceError::Spec(format!(
                            "pair ({i},{j}) declared with {prev} and {d}"
                        )));
                    }
                }
                out.insert(key, d);
            }
        }
        Ok(Self { pairs: out })
    }

    /// Regular `n`-gon with the given side: cycle edges plus next-nearest
    /// (skip-one) pairs. For `n = 6`, side 1 gives 6 pairs at 1 and 6 at √3.
    pub fn regular_polygon(n: usize, side: f64) -> Result<Self, GuidanceError> {
        if n < 3 {
            return Err(GuidanceError::Spec(format!("polygon needs ≥ 3 vertices, got {n}")));
        }
        let r = side / (2.0 * (PI / n as f64).sin());
        let skip = 2.0 * r * (2.0 * PI / n as f64).sin();
        let mut pairs = Vec::new();
        for i in 0..n {
            pairs.push((i, (i + 1) % n, side));
            if n > 4 || (n == 4 && i < 2) {
                pairs.push((i, (i + 2) % n, skip));
            }
        }
        Self::from_pairs(&pairs)
    }

    /// Default formation: unit-side hexagon.
    pub fn hexagon() -> Self {
        Self::regular_polygon(6, 1.0).expect("valid hexagon")
    }

    /// Vertices of the regular polygon used by [`Self::regular_polygon`],
    /// centered at the origin.
    pub fn polygon_vertices(n: usize, side: f64) -> Vec<[f64; 2]> {
        let r = side / (2.0 * (PI / n as f64).sin());
        (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                [r * a.cos(), r * a.sin()]
            })
            .collect()
    }

    pub fn distance(&self, i: AgentId, j: AgentId) -> Option<f64> {
        self.pairs.get(&(i, j)).copied()
    }

    /// Each pair once, with `i < j`.
    pub fn unordered_pairs(&self) -> Vec<(AgentId, AgentId, f64)> {
        self.pairs
            .iter()
            .filter(|((i, j), _)| i < j)
            .map(|(&(i, j), &d)| (i, j, d))
            .collect()
    }

    pub fn partners(&self, i: AgentId) -> Vec<AgentId> {
        self.pairs
            .keys()
            .filter(|(a, _)| *a == i)
            .map(|&(_, b)| b)
            .collect()
    }

    /// Undirected graph with one edge per declared pair.
    pub fn to_graph(&self, n: usize) -> Result<CommGraph, GuidanceError> {
        let edges: Vec<_> = self.pairs.keys().copied().collect();
        CommGraph::from_directed_edges(n, &edges).map_err(|e| GuidanceError::Spec(e.to_string()))
    }

    /// Every pair must be an edge (both directions) of `g`.
    pub fn check_graph(&self, g: &CommGraph) -> Result<(), GuidanceError> {
        match self.pairs.keys().find(|&&(i, j)| !g.has_edge(i, j)) {
            Some((i, j)) => Err(GuidanceError::Spec(format!(
                "pair ({i},{j}) is not an edge of the communication graph"
            ))),
            None => Ok(()),
        }
    }

    /// `Σ_pairs (‖x_i − x_j‖ − d_ij)²` over unordered pairs.
    pub fn error(&self, positions: &[Vec<f64>]) -> f64 {
        self.unordered_pairs()
            .iter()
            .map(|&(i, j, d)| (dist(&positions[i], &positions[j]) - d).powi(2))
            .sum()
    }

    /// `¼ Σ_pairs (‖x_i − x_j‖² − d_ij²)²`, the potential whose negative
    /// gradient is the formation law.
    pub fn potential(&self, positions: &[Vec<f64>]) -> f64 {
        self.unordered_pairs()
            .iter()
            .map(|&(i, j, d)| 0.25 * (dist2(&positions[i], &positions[j]) - d * d).powi(2))
            .sum()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

/// `Σ_j (‖own − x_j‖² − d_ij²)(x_j − own)`.
pub fn formation_velocity(
    own: &[f64],
    neigh: &Neighborhood,
    spec: &FormationSpec,
    self_id: AgentId,
) -> Result<Vec<f64>, GuidanceError> {
    let mut u = zero(own.len());
    for (&j, x) in neigh {
        let d = spec.distance(self_id, j).ok_or_else(|| {
            GuidanceError::Spec(format!("no desired distance between {self_id} and {j}"))
        })?;
        let w = dist2(own, x) - d * d;
        for (k, ui) in u.iter_mut().enumerate() {
            *ui += w * (x[k] - own[k]);
        }
    }
    Ok(u)
}

/// A velocity law evaluated on the positions received this round.
pub trait VelocityLaw: Send {
    fn evaluate(&self, own: &[f64], neigh: &Neighborhood) -> Result<Vec<f64>, GuidanceError>;
}

/// Zero input regardless of neighbors.
#[derive(Debug, Clone, Copy, Default)]
pub struct Idle;

impl VelocityLaw for Idle {
    fn evaluate(&self, own: &[f64], _: &Neighborhood) -> Result<Vec<f64>, GuidanceError> {
        Ok(zero(own.len()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Rendezvous {
    pub gain: f64,
}

impl VelocityLaw for Rendezvous {
    fn evaluate(&self, own: &[f64], neigh: &Neighborhood) -> Result<Vec<f64>, GuidanceError> {
        Ok(containment_velocity(own, neigh, false, self.gain))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Containment {
    pub is_leader: bool,
    pub gain: f64,
}

impl VelocityLaw for Containment {
    fn evaluate(&self, own: &[f64], neigh: &Neighborhood) -> Result<Vec<f64>, GuidanceError> {
        Ok(containment_velocity(own, neigh, self.is_leader, self.gain))
    }
}

#[derive(Debug, Clone)]
pub struct Formation {
    pub spec: FormationSpec,
    pub self_id: AgentId,
}

impl VelocityLaw for Formation {
    fn evaluate(&self, own: &[f64], neigh: &Neighborhood) -> Result<Vec<f64>, GuidanceError> {
        formation_velocity(own, neigh, &self.spec, self.self_id)
    }
}

fn positions(received: BTreeMap<AgentId, Payload>, dim: usize) -> Result<Neighborhood, GuidanceError> {
    received
        .into_iter()
        .map(|(j, p)| match p.as_vector() {
            Some(v) if v.len() == dim => Ok((j, v.to_vec())),
            _ => Err(GuidanceError::BadPosition(j)),
        })
        .collect()
}

/// Broadcast phase of a guidance round: send own position to out-neighbors.
pub fn guidance_publish(comm: &mut Communicator, pose: &[f64], round: u64) -> Result<(), GuidanceError> {
    let out = comm.out_neighbors().to_vec();
    comm.exchange_send(&Payload::Vector(pose.to_vec()), &out, round)?;
    Ok(())
}

/// Gather phase: collect neighbor positions and evaluate the law. Neighbors
/// whose message did not arrive are simply absent.
pub fn guidance_evaluate(
    comm: &mut Communicator,
    pose: &[f64],
    law: &dyn VelocityLaw,
    round: u64,
) -> Result<(Vec<f64>, Neighborhood), GuidanceError> {
    let ins = comm.in_neighbors().to_vec();
    let neigh = positions(comm.exchange_collect(&ins, round)?, pose.len())?;
    Ok((law.evaluate(pose, &neigh)?, neigh))
}

/// Exchange positions with neighbors, then evaluate `law` on what arrived.
pub fn guidance_step(
    comm: &mut Communicator,
    pose: &[f64],
    law: &dyn VelocityLaw,
    round: u64,
) -> Result<Vec<f64>, GuidanceError> {
    guidance_publish(comm, pose, round)?;
    Ok(guidance_evaluate(comm, pose, law, round)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::communicator::{Bus, CommPolicy};
    use crate::netgraph::EdgeSchedule;
    use proptest::prelude::*;

    fn nb(items: &[(AgentId, [f64; 2])]) -> Neighborhood {
        items.iter().map(|(j, p)| (*j, p.to_vec())).collect()
    }

    #[test]
    fn rendezvous_examples() {
        assert_eq!(rendezvous_velocity(&[0.0, 0.0], &Neighborhood::new()), vec![0.0, 0.0]);
        assert_eq!(rendezvous_velocity(&[0.0, 0.0], &nb(&[(1, [2.0, 0.0])])), vec![2.0, 0.0]);
        assert_eq!(
            rendezvous_velocity(&[1.0, 0.0], &nb(&[(1, [0.0, 0.0]), (2, [2.0, 0.0])])),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn containment_examples() {
        let n3: Neighborhood = [(1, vec![5.0, 1.0, 2.0])].into_iter().collect();
        assert_eq!(containment_velocity(&[0.0, 0.0, 0.0], &n3, true, 1.0), vec![0.0; 3]);
        assert_eq!(
            containment_velocity(&[0.0, 0.0], &nb(&[(1, [1.0, 1.0])]), false, 2.0),
            vec![2.0, 2.0]
        );
        assert_eq!(
            containment_velocity(&[1.0, 0.0], &nb(&[(1, [0.0, 0.0]), (2, [2.0, 0.0])]), false, 1.0),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn formation_examples() {
        let spec = FormationSpec::from_pairs(&[(0, 1, 1.0), (0, 2, 1.0)]).unwrap();
        assert_eq!(
            formation_velocity(&[0.0, 0.0], &nb(&[(1, [2.0, 0.0])]), &spec, 0).unwrap(),
            vec![6.0, 0.0]
        );
        assert_eq!(
            formation_velocity(&[0.0, 0.0], &nb(&[(1, [0.5, 0.0])]), &spec, 0).unwrap(),
            vec![-0.375, 0.0]
        );
        let at_rest = nb(&[(1, [1.0, 0.0]), (2, [0.0, 1.0])]);
        assert_eq!(formation_velocity(&[0.0, 0.0], &at_rest, &spec, 0).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            formation_velocity(&[0.0, 0.0], &nb(&[(3, [1.0, 0.0])]), &spec, 0),
            Err(GuidanceError::Spec(_))
        ));
    }

    #[test]
    fn hexagon_spec_shape() {
        let h = FormationSpec::hexagon();
        let pairs = h.unordered_pairs();
        assert_eq!(pairs.len(), 12);
        assert_eq!(pairs.iter().filter(|p| p.2 == 1.0).count(), 6);
        assert_eq!(pairs.iter().filter(|p| (p.2 - 3f64.sqrt()).abs() < 1e-12).count(), 6);
        let verts: Vec<Vec<f64>> = FormationSpec::polygon_vertices(6, 1.0).iter().map(|v| v.to_vec()).collect();
        assert!(h.error(&verts) < 1e-24);
    }

    #[test]
    fn spec_rejects_inconsistent_pairs() {
        assert!(FormationSpec::from_pairs(&[(0, 1, 1.0), (1, 0, 2.0)]).is_err());
        assert!(FormationSpec::from_pairs(&[(0, 1, -1.0)]).is_err());
        let s = FormationSpec::from_pairs(&[(0, 2, 1.0)]).unwrap();
        let path = CommGraph::from_undirected_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert!(s.check_graph(&path).is_err());
    }

    #[test]
    fn formation_law_is_negative_gradient() {
        let spec = FormationSpec::hexagon();
        let pos: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![(i as f64 * 1.7).sin() * 1.3, (i as f64 * 0.9).cos() * 1.1])
            .collect();
        let h = 1e-5;
        for i in 0..6 {
            let neigh: Neighborhood = spec.partners(i).into_iter().map(|j| (j, pos[j].clone())).collect();
            let u = formation_velocity(&pos[i], &neigh, &spec, i).unwrap();
            for k in 0..2 {
                let mut plus = pos.clone();
                let mut minus = pos.clone();
                plus[i][k] += h;
                minus[i][k] -= h;
                let grad = (spec.potential(&plus) - spec.potential(&minus)) / (2.0 * h);
                let rel = (u[k] + grad).abs() / grad.abs().max(1.0);
                assert!(rel < 1e-6, "agent {i} axis {k}: law {} vs -grad {}", u[k], -grad);
            }
        }
    }

    #[test]
    fn guidance_step_two_agents_threaded() {
        let bus = Bus::new();
        let p = CommPolicy::static_graph(CommGraph::complete(2));
        let mut c0 = Communicator::new(0, p.clone(), &bus).unwrap();
        let mut c1 = Communicator::new(1, p, &bus).unwrap();
        let h = std::thread::spawn(move || guidance_step(&mut c1, &[2.0, 0.0], &Rendezvous { gain: 1.0 }, 0));
        let u0 = guidance_step(&mut c0, &[0.0, 0.0], &Rendezvous { gain: 1.0 }, 0).unwrap();
        assert_eq!(u0, vec![2.0, 0.0]);
        assert_eq!(h.join().unwrap().unwrap(), vec![-2.0, 0.0]);
    }

    #[test]
    fn dropped_round_gives_zero_follower_input() {
        let bus = Bus::new();
        let p = CommPolicy::best_effort(EdgeSchedule::Fixed(CommGraph::complete(3)), 1.0, 0);
        let mut comms: Vec<_> = (0..3).map(|i| Communicator::new(i, p.clone(), &bus).unwrap()).collect();
        let poses = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for (c, x) in comms.iter_mut().zip(&poses) {
            guidance_publish(c, x, 0).unwrap();
        }
        let law = Containment { is_leader: false, gain: 1.0 };
        let (u, neigh) = guidance_evaluate(&mut comms[2], &poses[2], &law, 0).unwrap();
        assert!(neigh.is_empty());
        assert_eq!(u, vec![0.0, 0.0]);
        let leader = Containment { is_leader: true, gain: 1.0 };
        assert_eq!(guidance_step(&mut comms[0], &poses[0], &leader, 1).unwrap(), vec![0.0, 0.0]);
    }

    proptest! {
        // Undirected consensus keeps the centroid fixed under Euler steps.
        #[test]
        fn rendezvous_preserves_centroid(pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..7)) {
            let n = pts.len();
            let pos: Vec<Vec<f64>> = pts.iter().map(|&(x, y)| vec![x, y]).collect();
            let before: Vec<f64> = (0..2).map(|k| pos.iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
            let dt = 0.01;
            let next: Vec<Vec<f64>> = (0..n).map(|i| {
                let neigh: Neighborhood = (0..n).filter(|&j| j != i).map(|j| (j, pos[j].clone())).collect();
                let u = rendezvous_velocity(&pos[i], &neigh);
                vec![pos[i][0] + dt * u[0], pos[i][1] + dt * u[1]]
            }).collect();
            for k in 0..2 {
                let after = next.iter().map(|p| p[k]).sum::<f64>() / n as f64;
                prop_assert!((after - before[k]).abs() < 1e-9);
            }
        }
    }
}
