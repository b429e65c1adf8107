//! Dense linear programming: standard-form revised simplex, the assignment
//! LP, a Hungarian solver used as an independent oracle, and a small
//! general-form builder.

mod builder;
mod hungarian;
mod matrix;
mod simplex;

pub use builder::{BuiltSolution, LpBuilder, Sense, VarKind};
pub use hungarian::hungarian;
pub use matrix::Matrix;
pub use simplex::{lex_feasible, solve_from_basis, solve_from_basis_with, solve_lp, solve_lp_with, SimplexOptions};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LpError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("basis matrix is singular")]
    SingularBasis,
    #[error("starting basis is not primal feasible")]
    InfeasibleStart,
    #[error("simplex iteration limit reached after {0} pivots")]
    IterationLimit(usize),
}

/// `min cᵀx  s.t.  Ax = b, x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardLP {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Symbolic cost perturbation: column `j` costs `c_j + ε^(lex[j] + 1)`.
    /// Priorities must be distinct.
    pub lex: Option<Vec<u64>>,
}

impl StandardLP {
    pub fn new(a: Matrix, b: Vec<f64>, c: Vec<f64>) -> Result<Self, LpError> {
        let p = Self { a, b, c, lex: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let (m, n) = (self.a.rows(), self.a.cols());
        if self.b.len() != m {
            return Err(LpError::Shape(format!("A has {m} rows, b has {}", self.b.len())));
        }
        if self.c.len() != n {
            return Err(LpError::Shape(format!("A has {n} columns, c has {}", self.c.len())));
        }
        if let Some(l) = &self.lex {
            if l.len() != n {
                return Err(LpError::Shape(format!("{} priorities for {n} columns", l.len())));
            }
        }
        let finite = self.a.data().iter().chain(&self.b).chain(&self.c).all(|x| x.is_finite());
        if !finite {
            return Err(LpError::Shape("non-finite problem data".into()));
        }
        Ok(())
    }

    /// `c − Aᵀy`.
    pub fn reduced_costs(&self, y: &[f64]) -> Vec<f64> {
        let ya = self.a.vec_mul(y);
        self.c.iter().zip(ya).map(|(c, v)| c - v).collect()
    }

    /// Largest `|Ax − b|` entry.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.a
            .mul_vec(x)
            .iter()
            .zip(&self.b)
            .map(|(ax, b)| (ax - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Basic columns, ascending. May be shorter than the row count when the
    /// constraint matrix is rank deficient.
    pub basis: Vec<usize>,
    pub status: LpStatus,
    /// Dual multipliers `y` for the original rows.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

/// `n × n` cost matrix; entry `(i, k)` is the cost of robot `i` serving task `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProblem {
    n: usize,
    cost: Vec<f64>,
}

impl AssignmentProblem {
    pub fn new(cost: Vec<Vec<f64>>) -> Result<Self, LpError> {
        let n = cost.len();
        if n == 0 {
            return Err(LpError::Shape("empty assignment problem".into()));
        }
        let mut flat = Vec::with_capacity(n * n);
        for row in &cost {
            if row.len() != n {
                return Err(LpError::Shape(format!("cost row of length {} for n = {n}", row.len())));
            }
            flat.extend_from_slice(row);
        }
        if flat.iter().any(|c| !c.is_finite()) {
            return Err(LpError::Shape("non-finite cost".into()));
        }
        Ok(Self { n, cost: flat })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cost(&self, i: usize, k: usize) -> f64 {
        self.cost[i * self.n + k]
    }

    /// Total cost of `perm` (robot `i` serves task `perm[i]`).
    pub fn total(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &k)| self.cost(i, k)).sum()
    }
}

/// Column index of variable `x_ik` in [`build_assignment_lp`].
pub fn assignment_var(n: usize, robot: usize, task: usize) -> usize {
    robot * n + task
}

/// Row of the task constraint for `task`, or `None` for the dropped last task row.
pub fn task_row(n: usize, task: usize) -> Option<usize> {
    (task + 1 < n).then_some(n + task)
}

/// Assignment LP with variables `x_ik`, robot rows `Σ_k x_ik = 1` (rows
/// `0..n`) and task rows `Σ_i x_ik = 1` for tasks `0..n−1` (rows
/// `n..2n−1`). The last task row is implied by the others and dropped, so
/// `A` has full row rank `2n − 1`.
pub fn build_assignment_lp(p: &AssignmentProblem) -> StandardLP {
    let n = p.n;
    let m = 2 * n - 1;
    let mut a = Matrix::zeros(m, n * n);
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let j = assignment_var(n, i, k);
            a[(i, j)] = 1.0;
            if let Some(r) = task_row(n, k) {
                a[(r, j)] = 1.0;
            }
            c[j] = p.cost(i, k);
        }
    }
    StandardLP {
        a,
        b: vec![1.0; m],
        c,
        lex: None,
    }
}

/// Read a permutation (robot → task) out of an assignment-LP vertex.
pub fn assignment_from_x(n: usize, x: &[f64]) -> Option<Vec<usize>> {
    let mut perm = Vec::with_capacity(n);
    for i in 0..n {
        perm.push((0..n).find(|&k| x[assignment_var(n, i, k)] > 0.5)?);
    }
    let mut seen = vec![false; n];
    for &k in &perm {
        if std::mem::replace(&mut seen[k], true) {
            return None;
        }
    }
    Some(perm)
}

/// How [`lex_perturb`] breaks cost ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsSchedule {
    /// No perturbation.
    Zero,
    /// `c_j += eps^(j+1)` in floating point. Terms below the precision of
    /// `c_j` vanish, so only the leading columns are separated.
    Numeric { eps: f64 },
    /// Symbolic `ε^(j+1)` with infinitesimal `ε`, resolved exactly by the solver.
    Exact,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        EpsSchedule::Numeric { eps: 1e-7 }
    }
}

pub fn lex_perturb(p: &StandardLP, schedule: EpsSchedule) -> StandardLP {
    let mut out = p.clone();
    match schedule {
        EpsSchedule::Zero => {}
        EpsSchedule::Numeric { eps } => {
            let mut e = eps;
            for c in out.c.iter_mut() {
                *c += e;
                e *= eps;
            }
        }
        EpsSchedule::Exact => out.lex = Some((0..p.c.len() as u64).collect()),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ap(rows: &[&[f64]]) -> AssignmentProblem {
        AssignmentProblem::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn single_robot_is_forced() {
        let lp = build_assignment_lp(&ap(&[&[3.5]]));
        assert_eq!((lp.a.rows(), lp.a.cols()), (1, 1));
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.x, vec![1.0]);
        assert_eq!(s.objective, 3.5);
    }

    #[test]
    fn two_by_two_examples() {
        let s = solve_lp(&build_assignment_lp(&ap(&[&[1.0, 2.0], &[2.0, 1.0]]))).unwrap();
        assert_eq!(assignment_from_x(2, &s.x), Some(vec![0, 1]));
        assert_eq!(s.objective, 2.0);

        let s = solve_lp(&build_assignment_lp(&ap(&[&[1.0, 1.0], &[1.0, 1.0]]))).unwrap();
        assert_eq!(s.objective, 2.0);
        assert!(assignment_from_x(2, &s.x).is_some());
    }

    #[test]
    fn column_incidence_convention() {
        let n = 4;
        let lp = build_assignment_lp(&ap(&[&[0.0; 4], &[0.0; 4], &[0.0; 4], &[0.0; 4]]));
        assert_eq!(lp.a.rows(), 2 * n - 1);
        for i in 0..n {
            for k in 0..n {
                let col = lp.a.column(assignment_var(n, i, k));
                let ones: Vec<usize> = (0..col.len()).filter(|&r| col[r] == 1.0).collect();
                let mut expect = vec![i];
                expect.extend(task_row(n, k));
                assert_eq!(ones, expect);
                assert_eq!(col.iter().filter(|&&v| v != 0.0).count(), expect.len());
            }
        }
    }

    #[test]
    fn perturbation_modes() {
        let lp = build_assignment_lp(&ap(&[&[1.0, 1.0], &[1.0, 1.0]]));
        assert_eq!(lex_perturb(&lp, EpsSchedule::Zero), lp);
        let num = lex_perturb(&lp, EpsSchedule::Numeric { eps: 1e-3 });
        assert!((num.c[0] - 1.001).abs() < 1e-15 && (num.c[1] - 1.000001).abs() < 1e-15);
        let exact = lex_perturb(&lp, EpsSchedule::Exact);
        assert_eq!(exact.c, lp.c);
        assert_eq!(exact.lex, Some(vec![0, 1, 2, 3]));
    }

    #[test]
    fn exact_perturbation_picks_unique_basis_on_ties() {
        // All four columns tie. Under c_j + ε^(j+1) the cheaper matching is
        // {x01, x10} (ε² + ε³ < ε + ε⁴), from every lex-feasible start.
        let lp = lex_perturb(&build_assignment_lp(&ap(&[&[1.0, 1.0], &[1.0, 1.0]])), EpsSchedule::Exact);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(assignment_from_x(2, &s.x), Some(vec![1, 0]));
        let mut bases = std::collections::BTreeSet::new();
        let mut starts = 0;
        for start in [[0usize, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]] {
            if lex_feasible(&lp, &start) {
                starts += 1;
                let w = solve_from_basis(&lp, &start).unwrap();
                assert!(lex_feasible(&lp, &w.basis));
                bases.insert(w.basis.clone());
                assert_eq!(assignment_from_x(2, &w.x), Some(vec![1, 0]));
            }
        }
        assert!(starts >= 2);
        assert_eq!(bases.len(), 1, "optimal bases {bases:?}");
    }

    #[test]
    fn shape_errors() {
        assert!(StandardLP::new(Matrix::zeros(2, 2), vec![1.0], vec![0.0, 0.0]).is_err());
        assert!(StandardLP::new(Matrix::zeros(1, 2), vec![1.0], vec![0.0]).is_err());
        assert!(AssignmentProblem::new(vec![vec![1.0, 2.0]]).is_err());
        assert!(AssignmentProblem::new(vec![]).is_err());
    }
}
