mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teamsim::assignment::{threaded_distributed_simplex, SimplexConfig};
use teamsim::communicator::CommPolicy;
use teamsim::netgraph::{erdos_renyi_connected, EdgeSchedule};

fn check_agreement(out: &[(usize, f64)], costs: &[Vec<f64>]) {
    let best = common::brute_assignment(costs);
    let mut seen = vec![false; costs.len()];
    for (i, &(task, cost)) in out.iter().enumerate() {
        assert!(!seen[task], "task {task} claimed twice");
        seen[task] = true;
        assert_eq!(cost, best, "agent {i}");
    }
    let total: f64 = out.iter().enumerate().map(|(i, &(k, _))| costs[i][k]).sum();
    assert_eq!(total, best);
}

#[test]
fn lossy_threads_agree_on_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..50u64 {
        let costs: Vec<Vec<f64>> = (0..4).map(|_| (0..4).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let g = erdos_renyi_connected(4, 0.2, trial).unwrap();
        let policy = CommPolicy::best_effort(EdgeSchedule::Fixed(g), 0.3, trial);
        let out = threaded_distributed_simplex(&costs, &policy, &SimplexConfig::default())
            .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
        check_agreement(&out, &costs);
    }
}

#[test]
fn reliable_threads_agree_on_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for trial in 0..20u64 {
        let n = 2 + (trial as usize) % 5;
        let costs: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let g = erdos_renyi_connected(n, 0.4, trial).unwrap();
        let out = threaded_distributed_simplex(&costs, &CommPolicy::static_graph(g), &SimplexConfig::default()).unwrap();
        check_agreement(&out, &costs);
    }
}
