//! Four unicycles, four visible tasks and four hidden ones. Each completion
//! reveals the next task; robots renegotiate with the distributed simplex.

use teamsim::assignment::{dynamic_assignment_loop, AssignmentEvent, DynamicConfig, SimplexConfig};
use teamsim::communicator::CommPolicy;
use teamsim::control::TrackerGains;
use teamsim::dynamics::{IntegratorConfig, RobotState};
use teamsim::netgraph::CommGraph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DynamicConfig {
        robots: (0..4).map(|i| RobotState::unicycle(i as f64, 0.0, 0.0)).collect(),
        initial_tasks: vec![[0.0, 1.0], [1.0, 1.5], [2.0, 1.0], [3.0, 1.5]],
        hidden_tasks: vec![[0.5, -1.0], [1.5, -1.0], [2.5, -1.0], [3.5, -1.0]],
        policy: CommPolicy::static_graph(CommGraph::from_undirected_edges(4, &[(0, 1), (1, 2), (2, 3)])?),
        integrator: IntegratorConfig::new(0.01),
        gains: TrackerGains::default(),
        simplex: SimplexConfig::default(),
        max_time: 120.0,
    };
    let out = dynamic_assignment_loop(&cfg, &mut |e| match e {
        AssignmentEvent::Reveal { t, task_id } => println!("{t:>6.2}  reveal task {task_id}"),
        AssignmentEvent::Complete { t, robot, task_id, .. } => println!("{t:>6.2}  robot {robot} completed task {task_id}"),
        AssignmentEvent::Consensus { t, epoch, cost, optimal } => {
            println!("{t:>6.2}  epoch {epoch}: agreed cost {cost:.3} (centralized {optimal:.3})")
        }
        _ => {}
    })?;
    println!("\ntask  reveal  start    end  robot");
    for g in &out.gantt {
        println!(
            "{:>4}  {:>6.2}  {:>5.2}  {:>5.2}  {:>5}",
            g.task_id, g.reveal_time, g.assign_time, g.complete_time, g.robot
        );
    }
    Ok(())
}
