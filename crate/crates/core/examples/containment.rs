//! Three static leaders, three followers, edges that flicker on and off.
//! Followers end up inside the leaders' triangle.

use teamsim::communicator::CommPolicy;
use teamsim::dynamics::RobotState;
use teamsim::netgraph::{CommGraph, EdgeSchedule};
use teamsim::runtime::{AgentSpec, GuidanceKind, Role, Simulation};
use teamsim::simrunner::metrics::hull_distance;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let start = [[0.0, 0.0], [4.0, 0.0], [2.0, 3.0], [-3.0, 2.0], [6.0, 4.0], [2.0, -3.0]];
    let specs: Vec<AgentSpec> = start
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut s = AgentSpec::new(i, RobotState::single(p), GuidanceKind::Containment { gain: 1.0 });
            s.role = if i < 3 { Role::Leader } else { Role::Follower };
            s
        })
        .collect();
    let schedule = EdgeSchedule::random(CommGraph::complete(6), 0.5, 42)?;
    let mut sim = Simulation::new(specs, CommPolicy::time_varying(schedule), 0.01)?;
    let leaders: Vec<[f64; 2]> = start[..3].to_vec();
    for second in 0..=30 {
        if second % 5 == 0 {
            let worst = sim.poses()[3..]
                .iter()
                .map(|p| hull_distance([p[0], p[1]], &leaders))
                .fold(0.0, f64::max);
            println!("t = {:>4.1} s  max follower distance to hull = {worst:.3e}", sim.time());
        }
        for _ in 0..100 {
            sim.step()?;
        }
    }
    Ok(())
}
