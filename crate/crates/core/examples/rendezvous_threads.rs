//! Four agents on their own threads meet at a common point while one of
//! them runs a background optimization job without stalling its loop.

use std::sync::{Arc, Barrier};

use teamsim::communicator::{Bus, CommPolicy, Payload};
use teamsim::dynamics::RobotState;
use teamsim::lp::{hungarian, AssignmentProblem};
use teamsim::netgraph::CommGraph;
use teamsim::runtime::{spawn_agent, AgentSpec, CancelToken, Clock, GuidanceKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bus = Bus::new();
    let policy = CommPolicy::static_graph(CommGraph::from_undirected_edges(4, &[(0, 1), (1, 2), (2, 3)])?);
    let barrier = Arc::new(Barrier::new(4));
    let starts = [[0.0, 0.0], [3.0, 1.0], [1.0, 4.0], [-2.0, 2.0]];
    let mut handles = Vec::new();
    for (i, p) in starts.iter().enumerate() {
        let spec = AgentSpec::new(i, RobotState::single(p), GuidanceKind::Rendezvous { gain: 1.0 });
        handles.push(spawn_agent(spec, policy.clone(), &bus, Clock::Lockstep(barrier.clone()), Some(2000))?);
    }

    handles[0].jobs().on_done(Box::new(|id, result| println!("job {id} finished: {result:?}")));
    handles[0].jobs().submit(Box::new(|_: &CancelToken| {
        let p = AssignmentProblem::new(vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]).ok()?;
        Some(Payload::Real(hungarian(&p).1))
    }))?;

    for h in &mut handles {
        let ticks = h.join()?;
        println!("agent {} ran {ticks} ticks, ended at {:?}", h.id(), h.state().position());
    }
    handles[0].jobs().join();
    Ok(())
}
