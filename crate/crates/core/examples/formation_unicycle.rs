//! Six unicycles form a unit hexagon. The distance-based law runs on the
//! point just ahead of each robot and is mapped to (v, ω).

use teamsim::communicator::CommPolicy;
use teamsim::control::SiToUniParams;
use teamsim::dynamics::RobotState;
use teamsim::guidance::FormationSpec;
use teamsim::runtime::{AgentSpec, GuidanceKind, Simulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = FormationSpec::hexagon();
    let graph = spec.to_graph(6)?;
    let verts = FormationSpec::polygon_vertices(6, 1.0);
    let specs: Vec<AgentSpec> = verts
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let wobble = 0.25 * ((i * 7 % 5) as f64 - 2.0);
            let pose = RobotState::unicycle(v[0] + wobble, v[1] - 0.5 * wobble, 0.4 * i as f64);
            let mut s = AgentSpec::new(i, pose, GuidanceKind::Formation { spec: spec.clone() });
            s.mapping = Some(SiToUniParams {
                lookahead: 0.1,
                v_max: 1.0,
                omega_max: 10.0,
            });
            s
        })
        .collect();
    let mut sim = Simulation::new(specs, CommPolicy::static_graph(graph), 0.01)?;
    for step in 0..=3000 {
        if step % 500 == 0 {
            println!("t = {:>4.1} s  formation error = {:.3e}", sim.time(), spec.error(&sim.poses()));
        }
        sim.step()?;
    }
    Ok(())
}
