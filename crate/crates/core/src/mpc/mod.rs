//! Sequential distributed MPC for linear robots with a shared constraint on
//! the sum of their outputs. Stage costs are weighted 1-norms, so every
//! local problem is an LP; recursive feasibility comes from a terminal
//! equality to a known equilibrium.

mod distributed;

use serde::{Deserialize, Serialize};

use crate::communicator::CommError;
use crate::lp::{LpBuilder, LpError, LpStatus, Matrix, Sense, StandardLP, VarKind};

pub use distributed::{
    bootstrap_plans, joint_residual, mpc_round, mpc_step, DistributedMpc, MpcTraceRow, ReplanOutcome,
    ReplanSchedule, StepOutcome,
};

/// Slack allowed on dynamics, terminal and set constraints of a plan.
pub const PLAN_TOL: f64 = 1e-9;
/// Slack allowed on the coupling constraint.
pub const COUPLING_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum MpcError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("plan error: {0}")]
    Plan(String),
    #[error("infeasible: {0}")]
    Feasibility(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Comm(#[from] CommError),
}

fn shape(msg: String) -> MpcError {
    MpcError::Shape(msg)
}

/// `x(t+1) = A x(t) + B u(t)`, `z(t) = C x(t) + D u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearAgentModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub x0: Vec<f64>,
}

impl LinearAgentModel {
    pub fn nx(&self) -> usize {
        self.a.rows()
    }

    pub fn nu(&self) -> usize {
        self.b.cols()
    }

    pub fn nz(&self) -> usize {
        self.c.rows()
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let (n, m, r) = (self.nx(), self.nu(), self.nz());
        if self.a.cols() != n || self.b.rows() != n || self.x0.len() != n {
            return Err(shape(format!("A is {}x{}, B has {} rows, x0 has {}", n, self.a.cols(), self.b.rows(), self.x0.len())));
        }
        if self.c.cols() != n || self.d.rows() != r || (self.d.cols() != m && !(r == 0 || m == 0)) {
            return Err(shape(format!(
                "C is {}x{}, D is {}x{} for n = {n}, m = {m}",
                r,
                self.c.cols(),
                self.d.rows(),
                self.d.cols()
            )));
        }
        Ok(())
    }

    pub fn next_state(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        add(&self.a.mul_vec(x), &self.b.mul_vec(u))
    }

    pub fn output(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        if self.d.cols() == u.len() {
            add(&self.c.mul_vec(x), &self.d.mul_vec(u))
        } else {
            self.c.mul_vec(x)
        }
    }

    /// Single integrator `x⁺ = x + u` in `dim` dimensions with `z = x`.
    pub fn integrator(dim: usize, x0: Vec<f64>) -> Self {
        Self {
            a: Matrix::identity(dim),
            b: Matrix::identity(dim),
            c: Matrix::identity(dim),
            d: Matrix::zeros(dim, dim),
            x0,
        }
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `{v : H v ≤ g}` in `dim` dimensions. No rows means the whole space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    pub dim: usize,
    #[serde(default)]
    pub h: Vec<Vec<f64>>,
    #[serde(default)]
    pub g: Vec<f64>,
}

impl Polyhedron {
    pub fn whole(dim: usize) -> Self {
        Self {
            dim,
            h: Vec::new(),
            g: Vec::new(),
        }
    }

    /// `lo ≤ v ≤ hi`; infinite bounds are skipped.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Self {
        let dim = lo.len();
        let mut p = Self::whole(dim);
        for k in 0..dim {
            if hi[k].is_finite() {
                let mut row = vec![0.0; dim];
                row[k] = 1.0;
                p.h.push(row);
                p.g.push(hi[k]);
            }
            if lo[k].is_finite() {
                let mut row = vec![0.0; dim];
                row[k] = -1.0;
                p.h.push(row);
                p.g.push(-lo[k]);
            }
        }
        p
    }

    pub fn is_whole(&self) -> bool {
        self.h.is_empty()
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        if self.h.len() != self.g.len() || self.h.iter().any(|r| r.len() != self.dim) {
            return Err(shape(format!("polyhedron with {} rows, {} bounds, dim {}", self.h.len(), self.g.len(), self.dim)));
        }
        if self.h.iter().flatten().chain(&self.g).any(|v| !v.is_finite()) {
            return Err(shape("non-finite polyhedron data".into()));
        }
        Ok(())
    }

    /// `max_k (H v − g)_k`, or `None` for the whole space.
    pub fn violation(&self, v: &[f64]) -> Option<f64> {
        self.h
            .iter()
            .zip(&self.g)
            .map(|(row, g)| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - g)
            .reduce(f64::max)
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        self.violation(v).map_or(true, |r| r <= tol)
    }
}

/// Weighted 1-norm stage cost `Σ q_k |x_k − x_ref,k| + Σ r_k |u_k − u_ref,k|`.
/// References default to the terminal equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub state_weights: Vec<f64>,
    pub input_weights: Vec<f64>,
    #[serde(default)]
    pub state_ref: Option<Vec<f64>>,
    #[serde(default)]
    pub input_ref: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub state: Vec<f64>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSpec {
    pub model: LinearAgentModel,
    pub horizon: usize,
    #[serde(default)]
    pub state_set: Option<Polyhedron>,
    #[serde(default)]
    pub input_set: Option<Polyhedron>,
    /// Shared set for the summed outputs.
    pub coupling: Polyhedron,
    pub cost: StageCost,
    pub terminal: Equilibrium,
}

impl OcpSpec {
    pub fn validate(&self) -> Result<(), MpcError> {
        self.model.validate()?;
        let (n, m, r) = (self.model.nx(), self.model.nu(), self.model.nz());
        if self.horizon == 0 {
            return Err(shape("horizon must be at least 1".into()));
        }
        for (set, dim, what) in [(&self.state_set, n, "state"), (&self.input_set, m, "input")] {
            if let Some(s) = set {
                s.validate()?;
                if s.dim != dim {
                    return Err(shape(format!("{what} set has dim {}, expected {dim}", s.dim)));
                }
            }
        }
        self.coupling.validate()?;
        if self.coupling.dim != r {
            return Err(shape(format!("coupling set has dim {}, outputs have {r}", self.coupling.dim)));
        }
        let c = &self.cost;
        if c.state_weights.len() != n || c.input_weights.len() != m {
            return Err(shape(format!("{} state and {} input weights", c.state_weights.len(), c.input_weights.len())));
        }
        if c.state_weights.iter().chain(&c.input_weights).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(shape("weights must be finite and non-negative".into()));
        }
        if c.state_ref.as_ref().is_some_and(|v| v.len() != n) || c.input_ref.as_ref().is_some_and(|v| v.len() != m) {
            return Err(shape("reference dimension mismatch".into()));
        }
        let (xb, ub) = (&self.terminal.state, &self.terminal.input);
        if xb.len() != n || ub.len() != m {
            return Err(shape("terminal pair dimension mismatch".into()));
        }
        if max_abs_diff(&self.model.next_state(xb, ub), xb) > PLAN_TOL {
            return Err(MpcError::Plan("terminal pair is not an equilibrium".into()));
        }
        if !self.state_set.as_ref().map_or(true, |s| s.contains(xb, PLAN_TOL))
            || !self.input_set.as_ref().map_or(true, |s| s.contains(ub, PLAN_TOL))
        {
            return Err(MpcError::Plan("terminal pair violates the local constraints".into()));
        }
        Ok(())
    }

    fn state_ref(&self) -> &[f64] {
        self.cost.state_ref.as_deref().unwrap_or(&self.terminal.state)
    }

    fn input_ref(&self) -> &[f64] {
        self.cost.input_ref.as_deref().unwrap_or(&self.terminal.input)
    }

    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let sx: f64 = self
            .cost
            .state_weights
            .iter()
            .zip(x.iter().zip(self.state_ref()))
            .map(|(w, (a, b))| w * (a - b).abs())
            .sum();
        let su: f64 = self
            .cost
            .input_weights
            .iter()
            .zip(u.iter().zip(self.input_ref()))
            .map(|(w, (a, b))| w * (a - b).abs())
            .sum();
        sx + su
    }

    pub fn terminal_output(&self) -> Vec<f64> {
        self.model.output(&self.terminal.state, &self.terminal.input)
    }
}

/// A predicted trajectory over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// `T + 1` states starting at the current one.
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Plan {
    /// Roll the model forward from `x0` under `inputs`.
    pub fn from_inputs(model: &LinearAgentModel, x0: &[f64], inputs: Vec<Vec<f64>>) -> Self {
        let mut states = vec![x0.to_vec()];
        let mut outputs = Vec::with_capacity(inputs.len());
        for u in &inputs {
            let x = states.last().expect("non-empty");
            outputs.push(model.output(x, u));
            states.push(model.next_state(x, u));
        }
        Self { states, inputs, outputs }
    }

    /// Stay at the terminal equilibrium for the whole horizon.
    pub fn at_equilibrium(spec: &OcpSpec) -> Self {
        let t = spec.horizon;
        Self {
            states: vec![spec.terminal.state.clone(); t + 1],
            inputs: vec![spec.terminal.input.clone(); t],
            outputs: vec![spec.terminal_output(); t],
        }
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn cost(&self, spec: &OcpSpec) -> f64 {
        self.inputs
            .iter()
            .zip(&self.states)
            .map(|(u, x)| spec.stage_cost(x, u))
            .sum()
    }

    /// Dynamics, outputs and terminal state agree with `spec` within [`PLAN_TOL`].
    pub fn check_consistent(&self, spec: &OcpSpec) -> Result<(), MpcError> {
        let t = spec.horizon;
        if self.states.len() != t + 1 || self.inputs.len() != t || self.outputs.len() != t {
            return Err(MpcError::Plan(format!(
                "plan lengths {}/{}/{} for horizon {t}",
                self.states.len(),
                self.inputs.len(),
                self.outputs.len()
            )));
        }
        for k in 0..t {
            let next = spec.model.next_state(&self.states[k], &self.inputs[k]);
            if next.len() != self.states[k + 1].len() || max_abs_diff(&next, &self.states[k + 1]) > PLAN_TOL {
                return Err(MpcError::Plan(format!("dynamics violated at step {k}")));
            }
            let z = spec.model.output(&self.states[k], &self.inputs[k]);
            if z.len() != self.outputs[k].len() || max_abs_diff(&z, &self.outputs[k]) > PLAN_TOL {
                return Err(MpcError::Plan(format!("output mismatch at step {k}")));
            }
        }
        if max_abs_diff(&self.states[t], &spec.terminal.state) > PLAN_TOL {
            return Err(MpcError::Plan("plan does not end at the terminal state".into()));
        }
        Ok(())
    }

    pub fn locally_feasible(&self, spec: &OcpSpec) -> bool {
        let xs_ok = spec
            .state_set
            .as_ref()
            .map_or(true, |s| self.states.iter().all(|x| s.contains(x, PLAN_TOL)));
        let us_ok = spec
            .input_set
            .as_ref()
            .map_or(true, |s| self.inputs.iter().all(|u| s.contains(u, PLAN_TOL)));
        xs_ok && us_ok
    }
}

/// Drop the first step and append the terminal equilibrium.
pub fn shift_plan(p: &Plan, spec: &OcpSpec) -> Result<Plan, MpcError> {
    p.check_consistent(spec)?;
    let mut states = p.states[1..].to_vec();
    states.push(spec.terminal.state.clone());
    let mut inputs = p.inputs[1..].to_vec();
    inputs.push(spec.terminal.input.clone());
    let mut outputs = p.outputs[1..].to_vec();
    outputs.push(spec.terminal_output());
    Ok(Plan { states, inputs, outputs })
}

/// The local optimal control problem of one agent, kept in general form.
#[derive(Debug, Clone)]
pub struct LocalOcp {
    builder: LpBuilder,
    /// `u[t][k]` variable indices.
    inputs: Vec<Vec<usize>>,
    x0: Vec<f64>,
}

/// Assemble the agent's LP given the other agents' summed outputs
/// (`T` rows of length `r`).
pub fn build_local_ocp(spec: &OcpSpec, others_output_sum: &[Vec<f64>]) -> Result<LocalOcp, MpcError> {
    spec.validate()?;
    let model = &spec.model;
    let (n, m, r, t_h) = (model.nx(), model.nu(), model.nz(), spec.horizon);
    if others_output_sum.len() != t_h || others_output_sum.iter().any(|z| z.len() != r) {
        return Err(shape(format!("others' outputs must be {t_h}x{r}")));
    }
    if others_output_sum.iter().flatten().any(|v| !v.is_finite()) {
        return Err(shape("non-finite others' outputs".into()));
    }
    let mut b = LpBuilder::new();
    // x[t] for t = 1..=T; x[0] is the fixed initial state
    let xs: Vec<Vec<usize>> = (0..t_h).map(|_| (0..n).map(|_| b.var(VarKind::Free, 0.0)).collect()).collect();
    let us: Vec<Vec<usize>> = (0..t_h).map(|_| (0..m).map(|_| b.var(VarKind::Free, 0.0)).collect()).collect();
    let x0 = &model.x0;
    // affine expression of x[t][k] as (terms, constant)
    let state_expr = |t: usize, k: usize| -> (Vec<(usize, f64)>, f64) {
        if t == 0 {
            (Vec::new(), x0[k])
        } else {
            (vec![(xs[t - 1][k], 1.0)], 0.0)
        }
    };

    for t in 0..t_h {
        for k in 0..n {
            let mut terms = vec![(xs[t][k], 1.0)];
            let mut rhs = 0.0;
            for j in 0..n {
                let a = model.a[(k, j)];
                if a != 0.0 {
                    let (e, c) = state_expr(t, j);
                    terms.extend(e.into_iter().map(|(v, w)| (v, -a * w)));
                    rhs += a * c;
                }
            }
            for j in 0..m {
                let bk = model.b[(k, j)];
                if bk != 0.0 {
                    terms.push((us[t][j], -bk));
                }
            }
            b.constraint(terms, Sense::Eq, rhs);
        }
    }
    for k in 0..n {
        b.constraint(vec![(xs[t_h - 1][k], 1.0)], Sense::Eq, spec.terminal.state[k]);
    }

    let affine_row = |row: &[f64], t: usize, of_state: bool| -> (Vec<(usize, f64)>, f64) {
        let mut terms = Vec::new();
        let mut c = 0.0;
        for (k, &h) in row.iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            if of_state {
                let (e, k0) = state_expr(t, k);
                terms.extend(e.into_iter().map(|(v, w)| (v, h * w)));
                c += h * k0;
            } else {
                terms.push((us[t][k], h));
            }
        }
        (terms, c)
    };
    if let Some(set) = &spec.state_set {
        for t in 1..=t_h {
            for (row, g) in set.h.iter().zip(&set.g) {
                let (terms, c) = affine_row(row, t, true);
                b.constraint(terms, Sense::Le, g - c);
            }
        }
        if !set.contains(x0, PLAN_TOL) {
            return Err(MpcError::Feasibility("initial state outside the state set".into()));
        }
    }
    if let Some(set) = &spec.input_set {
        for t in 0..t_h {
            for (row, g) in set.h.iter().zip(&set.g) {
                let (terms, c) = affine_row(row, t, false);
                b.constraint(terms, Sense::Le, g - c);
            }
        }
    }
    // coupling: H (C x + D u + others) ≤ h
    let coupled = &spec.coupling;
    for t in 0..t_h {
        for (row, g) in coupled.h.iter().zip(&coupled.g) {
            let mut x_row = vec![0.0; n];
            let mut u_row = vec![0.0; m];
            for (i, &hv) in row.iter().enumerate() {
                for k in 0..n {
                    x_row[k] += hv * model.c[(i, k)];
                }
                if model.d.cols() == m {
                    for k in 0..m {
                        u_row[k] += hv * model.d[(i, k)];
                    }
                }
            }
            let (mut terms, c) = affine_row(&x_row, t, true);
            terms.extend(affine_row(&u_row, t, false).0);
            let other: f64 = row.iter().zip(&others_output_sum[t]).map(|(a, z)| a * z).sum();
            b.constraint(terms, Sense::Le, g - c - other);
        }
    }

    // epigraph variables for the 1-norm terms
    let (xr, ur) = (spec.state_ref(), spec.input_ref());
    for t in 1..t_h {
        for k in 0..n {
            let w = spec.cost.state_weights[k];
            if w > 0.0 {
                let s = b.var(VarKind::NonNeg, w);
                b.constraint(vec![(s, 1.0), (xs[t - 1][k], -1.0)], Sense::Ge, -xr[k]);
                b.constraint(vec![(s, 1.0), (xs[t - 1][k], 1.0)], Sense::Ge, xr[k]);
            }
        }
    }
    for t in 0..t_h {
        for k in 0..m {
            let w = spec.cost.input_weights[k];
            if w > 0.0 {
                let s = b.var(VarKind::NonNeg, w);
                b.constraint(vec![(s, 1.0), (us[t][k], -1.0)], Sense::Ge, -ur[k]);
                b.constraint(vec![(s, 1.0), (us[t][k], 1.0)], Sense::Ge, ur[k]);
            }
        }
    }
    Ok(LocalOcp {
        builder: b,
        inputs: us,
        x0: x0.clone(),
    })
}

impl LocalOcp {
    pub fn standard(&self) -> StandardLP {
        self.builder.to_standard().0
    }

    /// Optimal plan, re-simulated from the optimal inputs, or `None` when
    /// the problem is infeasible.
    pub fn solve(&self, spec: &OcpSpec) -> Result<Option<Plan>, MpcError> {
        let s = self.builder.solve()?;
        match s.status {
            LpStatus::Optimal => {
                let inputs = self
                    .inputs
                    .iter()
                    .map(|row| row.iter().map(|&v| s.values[v]).collect())
                    .collect();
                Ok(Some(Plan::from_inputs(&spec.model, &self.x0, inputs)))
            }
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(MpcError::Feasibility("local problem unbounded".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::solve_lp;

    fn scalar_spec(x0: f64, horizon: usize, umax: f64) -> OcpSpec {
        OcpSpec {
            model: LinearAgentModel::integrator(1, vec![x0]),
            horizon,
            state_set: None,
            input_set: Some(Polyhedron::boxed(&[-umax], &[umax])),
            coupling: Polyhedron::whole(1),
            cost: StageCost {
                state_weights: vec![1.0],
                input_weights: vec![0.1],
                state_ref: None,
                input_ref: None,
            },
            terminal: Equilibrium {
                state: vec![0.0],
                input: vec![0.0],
            },
        }
    }

    #[test]
    fn one_step_deadbeat() {
        let spec = scalar_spec(1.0, 1, 1.0);
        let plan = build_local_ocp(&spec, &[vec![0.0]]).unwrap().solve(&spec).unwrap().unwrap();
        assert_eq!(plan.inputs, vec![vec![-1.0]]);
        assert_eq!(plan.states, vec![vec![1.0], vec![0.0]]);
    }

    #[test]
    fn vacuous_coupling_adds_no_rows() {
        let spec = scalar_spec(1.0, 3, 1.0);
        let lp = build_local_ocp(&spec, &vec![vec![5.0]; 3]).unwrap().standard();
        let mut coupled = spec.clone();
        coupled.coupling = Polyhedron::boxed(&[f64::NEG_INFINITY], &[1.0]);
        let lp2 = build_local_ocp(&coupled, &vec![vec![0.0]; 3]).unwrap().standard();
        assert_eq!(lp2.a.rows(), lp.a.rows() + 3);
    }

    #[test]
    fn unreachable_terminal_is_infeasible() {
        let spec = scalar_spec(5.0, 2, 1.0);
        let ocp = build_local_ocp(&spec, &[vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(solve_lp(&ocp.standard()).unwrap().status, LpStatus::Infeasible);
        assert_eq!(ocp.solve(&spec).unwrap(), None);
    }

    #[test]
    fn fastest_descent_is_optimal() {
        // moving at full speed strictly reduces the state cost
        let spec = scalar_spec(3.0, 5, 1.0);
        let plan = build_local_ocp(&spec, &vec![vec![0.0]; 5]).unwrap().solve(&spec).unwrap().unwrap();
        let u: Vec<f64> = plan.inputs.iter().map(|u| u[0]).collect();
        assert_eq!(u, vec![-1.0, -1.0, -1.0, 0.0, 0.0]);
        assert!((plan.cost(&spec) - (3.0 + 2.0 + 1.0 + 0.3)).abs() < 1e-12);
        plan.check_consistent(&spec).unwrap();
    }

    #[test]
    fn shift_examples() {
        let spec = scalar_spec(0.0, 4, 1.0);
        let eq = Plan::at_equilibrium(&spec);
        assert_eq!(shift_plan(&eq, &spec).unwrap(), eq);

        let spec = scalar_spec(2.0, 4, 1.0);
        let plan = build_local_ocp(&spec, &vec![vec![0.0]; 4]).unwrap().solve(&spec).unwrap().unwrap();
        let shifted = shift_plan(&plan, &spec).unwrap();
        assert_eq!(shifted.states[3], spec.terminal.state);
        assert_eq!(shifted.states[4], spec.terminal.state);
        let mut after = spec.clone();
        after.model.x0 = shifted.states[0].clone();
        shifted.check_consistent(&after).unwrap();

        let mut bad = plan.clone();
        bad.states[2][0] += 1e-6;
        assert!(matches!(shift_plan(&bad, &spec), Err(MpcError::Plan(_))));
    }

    #[test]
    fn validation_errors() {
        let mut spec = scalar_spec(0.0, 2, 1.0);
        spec.terminal.input = vec![0.5];
        assert!(spec.validate().is_err());
        let mut spec = scalar_spec(0.0, 2, 1.0);
        spec.horizon = 0;
        assert!(spec.validate().is_err());
        let spec = scalar_spec(0.0, 2, 1.0);
        assert!(build_local_ocp(&spec, &[vec![0.0]]).is_err());
    }
}
