use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teamsim::lp::{
    assignment_from_x, build_assignment_lp, hungarian, lex_perturb, solve_lp, AssignmentProblem,
    EpsSchedule, LpStatus,
};

fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> AssignmentProblem {
    AssignmentProblem::new(
        (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(0.0..10.0)).collect())
            .collect(),
    )
    .unwrap()
}

fn cost_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (3usize..=6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0.0..10.0f64, n), n))
}

#[test]
fn random_assignment_lps_match_hungarian() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for t in 0..200 {
        let n = 3 + t % 4;
        let p = random_problem(&mut rng, n);
        let lp = build_assignment_lp(&p);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        let perm = assignment_from_x(n, &s.x).expect("integral vertex");
        let (_, best) = hungarian(&p);
        assert_eq!(p.total(&perm), best, "instance {t}");
        assert!((s.objective - best).abs() < 1e-9);
    }
}

#[test]
fn numeric_perturbation_keeps_unique_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.gen_range(2..=6);
        let p = random_problem(&mut rng, n);
        let lp = build_assignment_lp(&p);
        let plain = assignment_from_x(n, &solve_lp(&lp).unwrap().x).unwrap();
        let pert = lex_perturb(&lp, EpsSchedule::default());
        let perturbed = assignment_from_x(n, &solve_lp(&pert).unwrap().x).unwrap();
        assert_eq!(plain, perturbed);
        assert_eq!(plain, hungarian(&p).0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn duality_gap_closes(cost in cost_matrix()) {
        let p = AssignmentProblem::new(cost).unwrap();
        let lp = build_assignment_lp(&p);
        let s = solve_lp(&lp).unwrap();
        prop_assert_eq!(s.status, LpStatus::Optimal);
        let dual_obj: f64 = lp.b.iter().zip(&s.duals).map(|(b, y)| b * y).sum();
        prop_assert!((dual_obj - s.objective).abs() <= 1e-8);
        prop_assert!(lp.reduced_costs(&s.duals).iter().all(|&r| r >= -1e-9));
        prop_assert!(lp.residual(&s.x) <= 1e-9);
    }

    #[test]
    fn vertices_are_integral(cost in cost_matrix()) {
        let p = AssignmentProblem::new(cost).unwrap();
        let s = solve_lp(&build_assignment_lp(&p)).unwrap();
        for v in &s.x {
            prop_assert!(v.abs() <= 1e-9 || (v - 1.0).abs() <= 1e-9, "entry {}", v);
        }
    }

    #[test]
    fn solves_are_deterministic(cost in cost_matrix()) {
        let lp = build_assignment_lp(&AssignmentProblem::new(cost).unwrap());
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn exact_mode_agrees_with_hungarian(cost in cost_matrix()) {
        let p = AssignmentProblem::new(cost).unwrap();
        let n = p.n();
        let lp = lex_perturb(&build_assignment_lp(&p), EpsSchedule::Exact);
        let perm = assignment_from_x(n, &solve_lp(&lp).unwrap().x).unwrap();
        prop_assert_eq!(p.total(&perm), hungarian(&p).1);
    }
}
