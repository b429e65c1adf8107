//! Four robots on a sparse random graph agree on the optimal assignment,
//! first in lockstep, then on threads over a lossy link.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teamsim::assignment::{lockstep_distributed_simplex, threaded_distributed_simplex, SimplexConfig};
use teamsim::communicator::CommPolicy;
use teamsim::lp::{hungarian, AssignmentProblem};
use teamsim::netgraph::{erdos_renyi_connected, EdgeSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let costs: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
    let g = erdos_renyi_connected(n, 0.2, 7)?;
    println!("edges: {:?}", g.edges());

    let cfg = SimplexConfig::default();
    let run = lockstep_distributed_simplex(&costs, &CommPolicy::static_graph(g.clone()), &cfg)?;
    let (perm, best) = hungarian(&AssignmentProblem::new(costs.clone())?);
    println!("lockstep: {:?} cost {:.4} after {} rounds", run.permutation, run.cost, run.rounds);
    println!("hungarian: {perm:?} cost {best:.4}");

    let lossy = CommPolicy::best_effort(EdgeSchedule::Fixed(g), 0.3, 7);
    let per_agent = threaded_distributed_simplex(&costs, &lossy, &cfg)?;
    for (i, (task, cost)) in per_agent.iter().enumerate() {
        println!("thread {i}: task {task}, believes total cost {cost:.4}");
    }
    Ok(())
}
