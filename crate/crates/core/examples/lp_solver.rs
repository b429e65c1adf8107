//! The dense simplex on a small production LP and on an assignment LP,
//! checked against the Hungarian method.

use teamsim::lp::{assignment_from_x, build_assignment_lp, hungarian, solve_lp, AssignmentProblem, LpBuilder, Sense, VarKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // maximize 3x + 5y  s.t.  x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18
    let mut lp = LpBuilder::new();
    let x = lp.var(VarKind::NonNeg, -3.0);
    let y = lp.var(VarKind::NonNeg, -5.0);
    lp.constraint(vec![(x, 1.0)], Sense::Le, 4.0);
    lp.constraint(vec![(y, 2.0)], Sense::Le, 12.0);
    lp.constraint(vec![(x, 3.0), (y, 2.0)], Sense::Le, 18.0);
    let s = lp.solve()?;
    println!("{:?}: x = {}, y = {}, objective = {}", s.status, s.values[x], s.values[y], -s.objective);

    let p = AssignmentProblem::new(vec![
        vec![9.0, 2.0, 7.0, 8.0],
        vec![6.0, 4.0, 3.0, 7.0],
        vec![5.0, 8.0, 1.0, 8.0],
        vec![7.0, 6.0, 9.0, 4.0],
    ])?;
    let sol = solve_lp(&build_assignment_lp(&p))?;
    let perm = assignment_from_x(4, &sol.x).ok_or("fractional vertex")?;
    println!("simplex assignment {perm:?}, cost {}", p.total(&perm));
    println!("hungarian {:?}", hungarian(&p));
    Ok(())
}
