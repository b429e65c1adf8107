//! Dense two-phase revised simplex.
//!
//! Pricing is Dantzig (most negative reduced cost) until
//! [`SimplexOptions::bland_after`] consecutive degenerate pivots, then
//! Bland's rule for the rest of the solve. All ties break on the lowest
//! column index, so identical inputs produce identical bases.
//!
//! With a lexicographic cost perturbation (see [`super::lex_perturb`]) the
//! solver works on the symbolic problem `c_j + ε^(prio_j + 1)` and uses the
//! lexicographic ratio test, which is equivalent to perturbing the
//! right-hand side by `(δ, δ², …)`. The optimal basis is then unique, which
//! the distributed simplex relies on.

use super::matrix::Matrix;
use super::{LpError, LpSolution, LpStatus, StandardLP};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const LEX_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            bland_after: 50,
            max_iterations: 100_000,
        }
    }
}

pub(crate) enum RunResult {
    Optimal,
    Unbounded,
}

pub(crate) struct Engine<'a> {
    a: &'a Matrix,
    b: Vec<f64>,
    pub basis: Vec<usize>,
    binv: Matrix,
    pub xb: Vec<f64>,
    since_refactor: usize,
    pub iterations: usize,
    pub bland: bool,
    stalled: usize,
}

impl<'a> Engine<'a> {
    pub fn new(a: &'a Matrix, b: Vec<f64>, basis: Vec<usize>) -> Result<Self, LpError> {
        let m = a.rows();
        if basis.len() != m {
            return Err(LpError::Shape(format!(
                "basis has {} columns for {m} rows",
                basis.len()
            )));
        }
        let mut e = Self {
            a,
            b,
            basis,
            binv: Matrix::identity(m),
            xb: vec![0.0; m],
            since_refactor: 0,
            iterations: 0,
            bland: false,
            stalled: 0,
        };
        e.refactor()?;
        Ok(e)
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        let bm = self.a.select_columns(&self.basis);
        self.binv = bm.inverse().ok_or(LpError::SingularBasis)?;
        self.xb = self.binv.mul_vec(&self.b);
        self.since_refactor = 0;
        Ok(())
    }

    fn m(&self) -> usize {
        self.basis.len()
    }

    /// `B⁻¹ A_j`.
    pub fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m();
        let col: Vec<f64> = (0..m).map(|r| self.a[(r, j)]).collect();
        self.binv.mul_vec(&col)
    }

    /// `yᵀ = c_Bᵀ B⁻¹`.
    pub fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let cb: Vec<f64> = self.basis.iter().map(|&j| cost[j]).collect();
        self.binv.vec_mul(&cb)
    }

    fn pivot(&mut self, p: usize, q: usize, d: &[f64]) -> Result<(), LpError> {
        let m = self.m();
        let dp = d[p];
        let theta = self.xb[p] / dp;
        for r in 0..m {
            if r != p {
                self.xb[r] -= theta * d[r];
            }
        }
        self.xb[p] = theta;
        let prow: Vec<f64> = self.binv.row(p).iter().map(|x| x / dp).collect();
        for r in 0..m {
            if r != p && d[r] != 0.0 {
                let f = d[r];
                for (x, pr) in self.binv.row_mut(r).iter_mut().zip(&prow) {
                    *x -= f * pr;
                }
            }
        }
        self.binv.row_mut(p).copy_from_slice(&prow);
        self.basis[p] = q;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        }
        Ok(())
    }

    /// Whether column `j` (nonbasic) has a lexicographically negative reduced
    /// cost under the symbolic perturbation `prio`.
    fn lex_negative(&self, j: usize, r: f64, prio: &[u64]) -> bool {
        if r < -COST_TOL {
            return true;
        }
        if r > COST_TOL {
            return false;
        }
        let d = self.ftran(j);
        let mut first = (prio[j], 1.0);
        for (p, &bj) in self.basis.iter().enumerate() {
            if d[p].abs() > LEX_TOL && prio[bj] < first.0 {
                first = (prio[bj], -d[p]);
            }
        }
        first.1 < 0.0
    }

    fn choose_entering(
        &self,
        cost: &[f64],
        eligible: &[bool],
        lex: Option<&[u64]>,
    ) -> Option<usize> {
        let y = self.duals(cost);
        let ya = self.a.vec_mul(&y);
        let mut in_basis = vec![false; self.a.cols()];
        for &j in &self.basis {
            in_basis[j] = true;
        }
        let mut dantzig: Option<(usize, f64)> = None;
        let mut first_lex: Option<usize> = None;
        for j in 0..self.a.cols() {
            if in_basis[j] || !eligible[j] {
                continue;
            }
            let r = cost[j] - ya[j];
            let negative = match lex {
                Some(prio) => self.lex_negative(j, r, prio),
                None => r < -COST_TOL,
            };
            if !negative {
                continue;
            }
            if self.bland {
                return Some(j);
            }
            if r < -COST_TOL {
                if dantzig.map_or(true, |(_, best)| r < best) {
                    dantzig = Some((j, r));
                }
            } else if first_lex.is_none() {
                first_lex = Some(j);
            }
        }
        dantzig.map(|(j, _)| j).or(first_lex)
    }

    fn choose_leaving(&self, d: &[f64], lex: bool) -> Option<usize> {
        let mut best: Option<usize> = None;
        for p in 0..self.m() {
            if d[p] <= PIVOT_TOL {
                continue;
            }
            let Some(cur) = best else {
                best = Some(p);
                continue;
            };
            let rp = self.xb[p].max(0.0) / d[p];
            let rc = self.xb[cur].max(0.0) / d[cur];
            let better = if (rp - rc).abs() > 1e-12 * (1.0 + rc.abs()) {
                rp < rc
            } else if lex {
                // compare rows of B⁻¹ scaled by the pivot entries
                let (bp, bc) = (self.binv.row(p), self.binv.row(cur));
                let mut verdict = None;
                for k in 0..self.m() {
                    let (vp, vc) = (bp[k] / d[p], bc[k] / d[cur]);
                    if (vp - vc).abs() > LEX_TOL {
                        verdict = Some(vp < vc);
                        break;
                    }
                }
                verdict.unwrap_or(self.basis[p] < self.basis[cur])
            } else {
                self.basis[p] < self.basis[cur]
            };
            if better {
                best = Some(p);
            }
        }
        best
    }

    pub fn run(
        &mut self,
        cost: &[f64],
        eligible: &[bool],
        lex: Option<&[u64]>,
        opts: &SimplexOptions,
    ) -> Result<RunResult, LpError> {
        loop {
            if self.iterations >= opts.max_iterations {
                return Err(LpError::IterationLimit(self.iterations));
            }
            let Some(q) = self.choose_entering(cost, eligible, lex) else {
                return Ok(RunResult::Optimal);
            };
            let d = self.ftran(q);
            let Some(p) = self.choose_leaving(&d, lex.is_some()) else {
                return Ok(RunResult::Unbounded);
            };
            let step = self.xb[p].max(0.0) / d[p];
            if step <= 1e-12 {
                self.stalled += 1;
                if self.stalled >= opts.bland_after {
                    self.bland = true;
                }
            } else {
                self.stalled = 0;
            }
            self.pivot(p, q, &d)?;
            self.iterations += 1;
        }
    }

    /// Pivot basic columns `>= first_art` out of the basis where some
    /// eligible column has a nonzero entry in their row. Rows where none does
    /// are redundant and keep their artificial at zero.
    fn drive_out(&mut self, first_art: usize) -> Result<(), LpError> {
        for p in 0..self.m() {
            if self.basis[p] < first_art {
                continue;
            }
            let row = self.binv.row(p).to_vec();
            let ra = self.a.vec_mul(&row);
            let mut in_basis = vec![false; self.a.cols()];
            for &j in &self.basis {
                in_basis[j] = true;
            }
            if let Some(q) = (0..first_art).find(|&j| !in_basis[j] && ra[j].abs() > 1e-7) {
                let d = self.ftran(q);
                self.pivot(p, q, &d)?;
            }
        }
        Ok(())
    }
}

pub fn solve_lp(p: &StandardLP) -> Result<LpSolution, LpError> {
    solve_lp_with(p, &SimplexOptions::default())
}

/// Two-phase solve from scratch.
pub fn solve_lp_with(p: &StandardLP, opts: &SimplexOptions) -> Result<LpSolution, LpError> {
    p.validate()?;
    let (m, n) = (p.a.rows(), p.a.cols());
    let mut w = Matrix::zeros(m, n + m);
    let mut sign = vec![1.0; m];
    let mut b = p.b.clone();
    for r in 0..m {
        if p.b[r] < 0.0 {
            sign[r] = -1.0;
            b[r] = -b[r];
        }
        for c in 0..n {
            w[(r, c)] = sign[r] * p.a[(r, c)];
        }
        w[(r, n + r)] = 1.0;
    }
    let prio: Option<Vec<u64>> = p.lex.as_ref().map(|pr| {
        let top = pr.iter().copied().max().unwrap_or(0) + 1;
        pr.iter().copied().chain((0..m as u64).map(|r| top + r)).collect()
    });
    let mut eng = Engine::new(&w, b.clone(), (n..n + m).collect())?;

    let phase1: Vec<f64> = (0..n + m).map(|j| if j < n { 0.0 } else { 1.0 }).collect();
    let all = vec![true; n + m];
    eng.run(&phase1, &all, prio.as_deref(), opts)?;
    let infeas: f64 = eng
        .basis
        .iter()
        .zip(&eng.xb)
        .filter(|(&j, _)| j >= n)
        .map(|(_, &x)| x)
        .sum();
    let scale = 1.0 + b.iter().map(|x| x.abs()).sum::<f64>();
    if infeas > 1e-8 * scale {
        return Ok(LpSolution {
            x: vec![0.0; n],
            objective: f64::NAN,
            basis: Vec::new(),
            status: LpStatus::Infeasible,
            duals: vec![0.0; m],
            iterations: eng.iterations,
        });
    }
    eng.drive_out(n)?;

    let phase2: Vec<f64> = p.c.iter().copied().chain(std::iter::repeat(0.0).take(m)).collect();
    let originals: Vec<bool> = (0..n + m).map(|j| j < n).collect();
    eng.bland = false;
    eng.stalled = 0;
    let res = eng.run(&phase2, &originals, prio.as_deref(), opts)?;
    Ok(finish(p, &eng, &phase2, &sign, res))
}

/// Phase-2 solve starting from a primal-feasible basis of `p` (one column
/// per row). Used to warm-start restricted problems.
pub fn solve_from_basis(p: &StandardLP, basis: &[usize]) -> Result<LpSolution, LpError> {
    solve_from_basis_with(p, basis, &SimplexOptions::default())
}

pub fn solve_from_basis_with(
    p: &StandardLP,
    basis: &[usize],
    opts: &SimplexOptions,
) -> Result<LpSolution, LpError> {
    p.validate()?;
    let n = p.a.cols();
    if let Some(&bad) = basis.iter().find(|&&j| j >= n) {
        return Err(LpError::Shape(format!("basis column {bad} out of range")));
    }
    let mut eng = Engine::new(&p.a, p.b.clone(), basis.to_vec())?;
    if eng.xb.iter().any(|&x| x < -1e-9) {
        return Err(LpError::InfeasibleStart);
    }
    let all = vec![true; n];
    let res = eng.run(&p.c, &all, p.lex.as_deref(), opts)?;
    let sign = vec![1.0; p.a.rows()];
    Ok(finish(p, &eng, &p.c, &sign, res))
}

/// Whether `basis` is feasible for the right-hand side perturbed by
/// `(δ, δ², …)`: every row of `[B⁻¹b | B⁻¹]` is lexicographically positive.
/// Warm starts from such a basis keep the property, so with a lexicographic
/// cost perturbation they all end at the same optimal basis.
pub fn lex_feasible(p: &StandardLP, basis: &[usize]) -> bool {
    if basis.len() != p.a.rows() || basis.iter().any(|&j| j >= p.a.cols()) {
        return false;
    }
    let Some(binv) = p.a.select_columns(basis).inverse() else {
        return false;
    };
    let xb = binv.mul_vec(&p.b);
    (0..p.a.rows()).all(|r| {
        std::iter::once(xb[r])
            .chain(binv.row(r).iter().copied())
            .find(|v| v.abs() > LEX_TOL)
            .map_or(false, |v| v > 0.0)
    })
}

fn finish(p: &StandardLP, eng: &Engine<'_>, cost: &[f64], sign: &[f64], res: RunResult) -> LpSolution {
    let n = p.a.cols();
    let mut x = vec![0.0; n];
    for (&j, &v) in eng.basis.iter().zip(&eng.xb) {
        if j < n {
            x[j] = v.max(0.0);
        }
    }
    let y = eng.duals(cost);
    let duals: Vec<f64> = y.iter().zip(sign).map(|(v, s)| v * s).collect();
    let mut basis: Vec<usize> = eng.basis.iter().copied().filter(|&j| j < n).collect();
    basis.sort_unstable();
    let status = match res {
        RunResult::Optimal => LpStatus::Optimal,
        RunResult::Unbounded => LpStatus::Unbounded,
    };
    let objective = match status {
        LpStatus::Optimal => p.c.iter().zip(&x).map(|(c, x)| c * x).sum(),
        LpStatus::Unbounded => f64::NEG_INFINITY,
        LpStatus::Infeasible => f64::NAN,
    };
    LpSolution {
        x,
        objective,
        basis,
        status,
        duals,
        iterations: eng.iterations,
    }
}
