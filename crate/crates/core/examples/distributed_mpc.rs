//! Two scalar robots share the budget x₁ + x₂ ≤ 1 while each is pulled
//! toward its own set-point. Plans travel over the bus.

use teamsim::communicator::CommPolicy;
use teamsim::mpc::{bootstrap_plans, DistributedMpc, Equilibrium, LinearAgentModel, OcpSpec, Polyhedron, ReplanSchedule, StageCost};
use teamsim::netgraph::CommGraph;

fn agent(x0: f64, target: f64) -> OcpSpec {
    OcpSpec {
        model: LinearAgentModel::integrator(1, vec![x0]),
        horizon: 8,
        state_set: None,
        input_set: Some(Polyhedron::boxed(&[-0.5], &[0.5])),
        coupling: Polyhedron::boxed(&[f64::NEG_INFINITY], &[1.0]),
        cost: StageCost {
            state_weights: vec![1.0],
            input_weights: vec![0.1],
            state_ref: Some(vec![target]),
            input_ref: Some(vec![0.0]),
        },
        terminal: Equilibrium {
            state: vec![0.0],
            input: vec![0.0],
        },
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs = vec![agent(-1.0, 2.0), agent(-2.0, 1.5)];
    let plans = bootstrap_plans(&specs)?;
    let policy = CommPolicy::static_graph(CommGraph::complete(2));
    let mut mpc = DistributedMpc::new(specs, plans, policy, ReplanSchedule::Sweep)?;
    println!("step    x1      x2    x1+x2  residual");
    for row in mpc.run(15)?.chunks(2) {
        let (a, b) = (&row[0], &row[1]);
        println!(
            "{:>4} {:>7.3} {:>7.3} {:>7.3}  {:>9.2e}",
            a.step,
            a.state[0],
            b.state[0],
            a.state[0] + b.state[0],
            a.coupling_residual.unwrap_or(0.0)
        );
    }
    Ok(())
}
