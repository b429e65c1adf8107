//! General-form LP front end: free/nonnegative variables and ≤ / = / ≥
//! rows, lowered to [`StandardLP`].

use super::{solve_lp, LpError, LpStatus, Matrix, StandardLP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    NonNeg,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Default)]
pub struct LpBuilder {
    kinds: Vec<VarKind>,
    cost: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, Sense, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltSolution {
    pub status: LpStatus,
    /// Values of the builder's variables (not the standard-form columns).
    pub values: Vec<f64>,
    pub objective: f64,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&mut self, kind: VarKind, cost: f64) -> usize {
        self.kinds.push(kind);
        self.cost.push(cost);
        self.kinds.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_cost(&mut self, v: usize, c: f64) {
        self.cost[v] += c;
    }

    /// `Σ coeff·var  (sense)  rhs`. Repeated variables are summed.
    pub fn constraint(&mut self, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        debug_assert!(terms.iter().all(|&(v, _)| v < self.kinds.len()));
        self.rows.push((terms, sense, rhs));
    }

    /// Standard form and, per builder variable, its `(plus, minus)` columns.
    pub fn to_standard(&self) -> (StandardLP, Vec<(usize, Option<usize>)>) {
        let mut map = Vec::with_capacity(self.kinds.len());
        let mut ncols = 0;
        for k in &self.kinds {
            match k {
                VarKind::NonNeg => {
                    map.push((ncols, None));
                    ncols += 1;
                }
                VarKind::Free => {
                    map.push((ncols, Some(ncols + 1)));
                    ncols += 2;
                }
            }
        }
        let slack_start = ncols;
        let nslack = self.rows.iter().filter(|r| r.1 != Sense::Eq).count();
        let total = ncols + nslack;
        let mut a = Matrix::zeros(self.rows.len(), total);
        let mut b = Vec::with_capacity(self.rows.len());
        let mut slack = slack_start;
        for (r, (terms, sense, rhs)) in self.rows.iter().enumerate() {
            for &(v, coef) in terms {
                let (plus, minus) = map[v];
                a[(r, plus)] += coef;
                if let Some(m) = minus {
                    a[(r, m)] -= coef;
                }
            }
            match sense {
                Sense::Le => {
                    a[(r, slack)] = 1.0;
                    slack += 1;
                }
                Sense::Ge => {
                    a[(r, slack)] = -1.0;
                    slack += 1;
                }
                Sense::Eq => {}
            }
            b.push(*rhs);
        }
        let mut c = vec![0.0; total];
        for (v, &(plus, minus)) in map.iter().enumerate() {
            c[plus] = self.cost[v];
            if let Some(m) = minus {
                c[m] = -self.cost[v];
            }
        }
        (StandardLP { a, b, c, lex: None }, map)
    }

    pub fn solve(&self) -> Result<BuiltSolution, LpError> {
        let (lp, map) = self.to_standard();
        let s = solve_lp(&lp)?;
        let values = map
            .iter()
            .map(|&(p, m)| s.x[p] - m.map_or(0.0, |m| s.x[m]))
            .collect::<Vec<_>>();
        let objective = match s.status {
            LpStatus::Optimal => values.iter().zip(&self.cost).map(|(x, c)| x * c).sum(),
            _ => s.objective,
        };
        Ok(BuiltSolution {
            status: s.status,
            values,
            objective,
        })
    }
}
