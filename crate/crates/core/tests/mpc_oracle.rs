mod common;

use proptest::prelude::*;
use teamsim::lp::Matrix;
use teamsim::mpc::{
    bootstrap_plans, joint_residual, mpc_step, Equilibrium, LinearAgentModel, OcpSpec, Polyhedron, ReplanSchedule, StageCost,
    COUPLING_TOL,
};

fn scalar(x0: f64, target: f64, umax: f64, coupling: Polyhedron) -> OcpSpec {
    OcpSpec {
        model: LinearAgentModel::integrator(1, vec![x0]),
        horizon: 8,
        state_set: None,
        input_set: Some(Polyhedron::boxed(&[-umax], &[umax])),
        coupling,
        cost: StageCost {
            state_weights: vec![1.0],
            input_weights: vec![0.1],
            state_ref: Some(vec![target]),
            input_ref: None,
        },
        terminal: Equilibrium { state: vec![0.0], input: vec![0.0] },
    }
}

fn double_integrator(x0: [f64; 2], horizon: usize) -> OcpSpec {
    OcpSpec {
        model: LinearAgentModel {
            a: Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]),
            b: Matrix::from_rows(&[vec![0.5], vec![1.0]]),
            c: Matrix::from_rows(&[vec![1.0, 0.0]]),
            d: Matrix::from_rows(&[vec![0.0]]),
            x0: x0.to_vec(),
        },
        horizon,
        state_set: None,
        input_set: Some(Polyhedron::boxed(&[-1.0], &[1.0])),
        coupling: Polyhedron::whole(1),
        cost: StageCost {
            state_weights: vec![1.0, 0.5],
            input_weights: vec![0.1],
            state_ref: None,
            input_ref: None,
        },
        terminal: Equilibrium { state: vec![0.0, 0.0], input: vec![0.0] },
    }
}

/// Closed-loop states of every agent, `steps + 1` per agent.
fn closed_loop(mut specs: Vec<OcpSpec>, steps: usize, schedule: ReplanSchedule) -> Vec<Vec<Vec<f64>>> {
    let mut plans = bootstrap_plans(&specs).unwrap();
    let mut traj: Vec<Vec<Vec<f64>>> = specs.iter().map(|s| vec![s.model.x0.clone()]).collect();
    for k in 0..steps {
        let out = mpc_step(&mut specs, &mut plans, k as u64, schedule).unwrap();
        let r = joint_residual(&specs, &plans).unwrap();
        assert!(r.map_or(true, |r| r <= COUPLING_TOL), "step {k}: joint residual {r:?}");
        for (i, x) in out.next_states.into_iter().enumerate() {
            traj[i].push(x);
        }
    }
    traj
}

fn max_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn double_integrator_matches_receding_horizon_oracle() {
    let spec = double_integrator([3.0, 0.0], 10);
    let (oracle, ambiguity) = common::receding_horizon(&spec, 30);
    assert!(ambiguity <= 1e-7, "oracle optimum not unique in its first move: {ambiguity:e}");
    let ours = closed_loop(vec![spec], 30, ReplanSchedule::Sweep);
    let gap = max_gap(&ours[0], &oracle);
    assert!(gap <= 1e-6, "gap {gap:e}");
}

#[test]
fn decoupled_team_matches_per_agent_oracles() {
    let w = Polyhedron::whole(1);
    let specs = vec![
        scalar(-1.0, 2.0, 0.5, w.clone()),
        scalar(2.5, -1.0, 0.75, w.clone()),
        double_integrator([-2.0, 1.0], 8),
    ];
    let ours = closed_loop(specs.clone(), 30, ReplanSchedule::Sweep);
    for (i, s) in specs.iter().enumerate() {
        let (oracle, ambiguity) = common::receding_horizon(s, 30);
        assert!(ambiguity <= 1e-7, "agent {i}: oracle ambiguity {ambiguity:e}");
        let gap = max_gap(&ours[i], &oracle);
        assert!(gap <= 1e-6, "agent {i}: gap {gap:e}");
    }
}

#[test]
fn decoupled_team_equals_agents_run_alone() {
    let w = Polyhedron::whole(1);
    let specs = vec![scalar(-1.0, 2.0, 0.5, w.clone()), scalar(0.3, 1.0, 0.2, w.clone()), double_integrator([1.0, -1.0], 8)];
    let team = closed_loop(specs.clone(), 30, ReplanSchedule::Sweep);
    for (i, s) in specs.into_iter().enumerate() {
        let alone = closed_loop(vec![s], 30, ReplanSchedule::Sweep);
        assert!(max_gap(&team[i], &alone[0]) <= 1e-9, "agent {i}");
    }
}

#[test]
fn coupled_pair_keeps_the_shared_budget() {
    let s = Polyhedron::boxed(&[f64::NEG_INFINITY], &[1.0]);
    for schedule in [ReplanSchedule::Sweep, ReplanSchedule::RoundRobin] {
        let mut specs = vec![scalar(-1.0, 2.0, 0.5, s.clone()), scalar(-2.0, 1.5, 0.5, s.clone())];
        let mut plans = bootstrap_plans(&specs).unwrap();
        for k in 0..30 {
            let out = mpc_step(&mut specs, &mut plans, k, schedule).unwrap();
            let sum = out.outputs[0][0] + out.outputs[1][0];
            assert!(sum - 1.0 <= 1e-8, "{schedule:?} step {k}: applied sum {sum}");
            assert!(out.residual.unwrap() <= 1e-8);
            let horizon_sum = plans[0].outputs.iter().zip(&plans[1].outputs).map(|(a, b)| a[0] + b[0]).fold(f64::MIN, f64::max);
            assert!(horizon_sum <= 1.0 + 1e-8, "{schedule:?} step {k}: planned sum {horizon_sum}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jointly_feasible_starts_stay_feasible(
        x0 in prop::collection::vec(-1.5..0.3f64, 2..4),
        targets in prop::collection::vec(-1.0..3.0f64, 3),
        budget in 0.5..2.0f64,
        round_robin in any::<bool>(),
    ) {
        let s = Polyhedron::boxed(&[f64::NEG_INFINITY], &[budget]);
        let mut specs: Vec<OcpSpec> = x0.iter().zip(&targets).map(|(&x, &t)| scalar(x, t, 0.5, s.clone())).collect();
        let schedule = if round_robin { ReplanSchedule::RoundRobin } else { ReplanSchedule::Sweep };
        let mut plans = bootstrap_plans(&specs).unwrap();
        for k in 0..12 {
            let out = mpc_step(&mut specs, &mut plans, k, schedule).unwrap();
            prop_assert!(out.residual.unwrap() <= COUPLING_TOL);
            let r = joint_residual(&specs, &plans).unwrap().unwrap();
            prop_assert!(r <= COUPLING_TOL, "step {}: {}", k, r);
            for rep in &out.replans {
                if let Some(new) = rep.new_cost {
                    if rep.replaced {
                        prop_assert!(new <= rep.old_cost + 1e-9);
                    }
                }
            }
        }
    }
}
