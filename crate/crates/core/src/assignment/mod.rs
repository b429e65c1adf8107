//! Task assignment: the task cloud, robot-to-task costs, and the distributed
//! simplex in which robots trade basis columns until they agree.

mod distributed;
mod dynamic;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::communicator::CommError;
use crate::lp::{self, assignment_var, task_row, LpError, LpStatus, Matrix, StandardLP};
use crate::netgraph::{AgentId, GraphError};

pub use distributed::{
    lockstep_distributed_simplex, run_distributed_simplex, threaded_distributed_simplex, SimplexAgent,
    SimplexConfig, SimplexRun,
};
pub use dynamic::{dynamic_assignment_loop, AssignmentEvent, DynamicConfig, DynamicOutcome, GanttRow};

#[derive(Debug, thiserror::Error)]
pub enum AssignmentError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no consensus after {rounds} rounds: {detail}")]
    NonConvergence { rounds: usize, detail: String },
    #[error("cloud error: {0}")]
    Cloud(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    Assigned,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: u64,
    pub position: [f64; 2],
    pub state: TaskState,
    /// Reveal order; hidden tasks get theirs when revealed.
    pub seq: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudState {
    pub revealed: Vec<Task>,
    pub hidden: VecDeque<Task>,
    pub completed: BTreeSet<u64>,
}

impl CloudState {
    /// Tasks are numbered in order, initial ones first.
    pub fn new(initial: &[[f64; 2]], hidden: &[[f64; 2]]) -> Self {
        let mk = |id: usize, p: [f64; 2]| Task {
            task_id: id as u64,
            position: p,
            state: TaskState::Pending,
            seq: id,
        };
        let revealed = initial.iter().enumerate().map(|(i, &p)| mk(i, p)).collect();
        let hidden = hidden
            .iter()
            .enumerate()
            .map(|(i, &p)| mk(initial.len() + i, p))
            .collect();
        Self {
            revealed,
            hidden,
            completed: BTreeSet::new(),
        }
    }

    /// Revealed tasks that are not completed, in reveal order.
    pub fn open_tasks(&self) -> Vec<Task> {
        self.revealed
            .iter()
            .filter(|t| t.state != TaskState::Completed)
            .cloned()
            .collect()
    }

    pub fn mark_assigned(&mut self, task_id: u64) {
        if let Some(t) = self.revealed.iter_mut().find(|t| t.task_id == task_id) {
            if t.state == TaskState::Pending {
                t.state = TaskState::Assigned;
            }
        }
    }

    pub fn is_finished(&self) -> bool {
        self.hidden.is_empty() && self.open_tasks().is_empty()
    }
}

/// Mark `task_id` completed and reveal the next hidden task, if any.
pub fn cloud_complete(cloud: &mut CloudState, task_id: u64) -> Result<Option<Task>, AssignmentError> {
    let Some(t) = cloud.revealed.iter_mut().find(|t| t.task_id == task_id) else {
        return Err(AssignmentError::Cloud(format!("task {task_id} is not revealed")));
    };
    if t.state == TaskState::Completed {
        return Err(AssignmentError::Cloud(format!("task {task_id} already completed")));
    }
    t.state = TaskState::Completed;
    cloud.completed.insert(task_id);
    let Some(mut next) = cloud.hidden.pop_front() else {
        return Ok(None);
    };
    next.seq = cloud.revealed.len();
    cloud.revealed.push(next.clone());
    Ok(Some(next))
}

/// Euclidean distance from the robot to each task.
pub fn costs_from_positions(robot_pos: &[f64], tasks: &[Task]) -> Vec<f64> {
    tasks
        .iter()
        .map(|t| (t.position[0] - robot_pos[0]).hypot(t.position[1] - robot_pos[1]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ColumnKey {
    Real { robot: AgentId, task: usize },
    /// Big-M starting column for constraint row `row`.
    Artificial { row: usize },
}

impl ColumnKey {
    /// Position in the symbolic cost perturbation: real columns first in
    /// `(robot, task)` order, then the artificials.
    pub fn priority(self, n: usize) -> u64 {
        match self {
            ColumnKey::Real { robot, task } => assignment_var(n, robot, task) as u64,
            ColumnKey::Artificial { row } => (n * n + row) as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexColumn {
    pub key: ColumnKey,
    /// Constraint column, length `2n − 1`.
    pub a: Vec<f64>,
    /// Unperturbed cost; the tie-breaking perturbation is carried by the key's priority.
    pub cost: f64,
}

fn incidence(n: usize, key: ColumnKey) -> Vec<f64> {
    let mut a = vec![0.0; 2 * n - 1];
    match key {
        ColumnKey::Real { robot, task } => {
            a[robot] = 1.0;
            if let Some(r) = task_row(n, task) {
                a[r] = 1.0;
            }
        }
        ColumnKey::Artificial { row } => a[row] = 1.0,
    }
    a
}

impl SimplexColumn {
    pub fn real(n: usize, robot: AgentId, task: usize, cost: f64) -> Self {
        let key = ColumnKey::Real { robot, task };
        Self {
            key,
            a: incidence(n, key),
            cost,
        }
    }

    pub fn artificial(n: usize, row: usize, big_m: f64) -> Self {
        let key = ColumnKey::Artificial { row };
        Self {
            key,
            a: incidence(n, key),
            cost: big_m,
        }
    }

    pub fn robot(&self) -> Option<AgentId> {
        match self.key {
            ColumnKey::Real { robot, .. } => Some(robot),
            ColumnKey::Artificial { .. } => None,
        }
    }

    pub fn task(&self) -> Option<usize> {
        match self.key {
            ColumnKey::Real { task, .. } => Some(task),
            ColumnKey::Artificial { .. } => None,
        }
    }

    /// Check the column against the `n`-robot incidence structure.
    pub fn validate(&self, n: usize) -> Result<(), AssignmentError> {
        let ok_key = match self.key {
            ColumnKey::Real { robot, task } => robot < n && task < n,
            ColumnKey::Artificial { row } => row < 2 * n - 1,
        };
        if !ok_key {
            return Err(AssignmentError::Protocol(format!("column {:?} out of range for n = {n}", self.key)));
        }
        if !self.cost.is_finite() {
            return Err(AssignmentError::Protocol(format!("column {:?} has cost {}", self.key, self.cost)));
        }
        if self.a != incidence(n, self.key) {
            return Err(AssignmentError::Protocol(format!("column {:?} has wrong incidence", self.key)));
        }
        Ok(())
    }
}

/// Robot `i`'s columns `(i, k)` for every task `k`.
pub fn local_columns(i: AgentId, costs: &[f64], n: usize) -> Vec<SimplexColumn> {
    costs
        .iter()
        .enumerate()
        .take(n)
        .map(|(k, &c)| SimplexColumn::real(n, i, k, c))
        .collect()
}

/// A feasible basis of the assignment LP, columns in priority order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexBasis {
    pub columns: Vec<SimplexColumn>,
    /// Basic variable values, aligned with `columns`.
    pub values: Vec<f64>,
    /// `Σ cost · value`, artificial columns included.
    pub objective: f64,
}

impl SimplexBasis {
    /// All-artificial starting basis; every agent begins here.
    pub fn artificial(n: usize, big_m: f64) -> Self {
        let m = 2 * n - 1;
        Self {
            columns: (0..m).map(|r| SimplexColumn::artificial(n, r, big_m)).collect(),
            values: vec![1.0; m],
            objective: big_m * m as f64,
        }
    }

    /// Robot count implied by the row count.
    pub fn n(&self) -> usize {
        (self.columns.len() + 1) / 2
    }

    pub fn keys(&self) -> Vec<ColumnKey> {
        self.columns.iter().map(|c| c.key).collect()
    }

    pub fn has_artificial(&self) -> bool {
        self.columns
            .iter()
            .zip(&self.values)
            .any(|(c, &v)| matches!(c.key, ColumnKey::Artificial { .. }) && v > 0.5)
    }

    /// Robot → task, when the basic solution is a full matching.
    pub fn permutation(&self) -> Option<Vec<usize>> {
        let n = self.n();
        let mut perm = vec![usize::MAX; n];
        let mut used = vec![false; n];
        for (c, &v) in self.columns.iter().zip(&self.values) {
            if let ColumnKey::Real { robot, task } = c.key {
                if v > 0.5 {
                    if perm[robot] != usize::MAX || used[task] {
                        return None;
                    }
                    perm[robot] = task;
                    used[task] = true;
                }
            }
        }
        perm.iter().all(|&k| k != usize::MAX).then_some(perm)
    }

    /// Cost of the matching without perturbation or artificials.
    pub fn assignment_cost(&self) -> Option<f64> {
        let perm = self.permutation()?;
        let mut cost = BTreeMap::new();
        for c in &self.columns {
            if let ColumnKey::Real { robot, task } = c.key {
                cost.insert((robot, task), c.cost);
            }
        }
        perm.iter()
            .enumerate()
            .map(|(i, &k)| cost.get(&(i, k)).copied())
            .sum()
    }
}

/// One local step: optimize over `basis ∪ own ∪ received`, warm-started
/// from the current basis, and return the lexicographically optimal basis
/// of that pool. Malformed or inconsistent columns reject the whole call.
pub fn simplex_round(
    state: &SimplexBasis,
    own: &[SimplexColumn],
    received: &[SimplexColumn],
) -> Result<SimplexBasis, AssignmentError> {
    let n = state.n();
    let m = 2 * n - 1;
    if state.columns.len() != m {
        return Err(AssignmentError::Protocol(format!("basis has {} columns", state.columns.len())));
    }
    let mut pool: BTreeMap<u64, &SimplexColumn> = BTreeMap::new();
    for c in state.columns.iter().chain(own).chain(received) {
        c.validate(n)?;
        match pool.get(&c.key.priority(n)) {
            Some(prev) if prev.cost != c.cost => {
                return Err(AssignmentError::Protocol(format!(
                    "column {:?} seen with costs {} and {}",
                    c.key, prev.cost, c.cost
                )));
            }
            Some(_) => {}
            None => {
                pool.insert(c.key.priority(n), c);
            }
        }
    }
    let cols: Vec<&SimplexColumn> = pool.values().copied().collect();
    let mut a = Matrix::zeros(m, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for (r, &v) in c.a.iter().enumerate() {
            a[(r, j)] = v;
        }
    }
    let lp = StandardLP {
        a,
        b: vec![1.0; m],
        c: cols.iter().map(|c| c.cost).collect(),
        lex: Some(pool.keys().copied().collect()),
    };
    let start: Vec<usize> = state
        .columns
        .iter()
        .map(|c| pool.keys().position(|&p| p == c.key.priority(n)).expect("basis column in pool"))
        .collect();
    let sol = lp::solve_from_basis(&lp, &start)?;
    if sol.status != LpStatus::Optimal || sol.basis.len() != m {
        return Err(AssignmentError::Protocol(format!("pool solve ended {:?}", sol.status)));
    }
    Ok(SimplexBasis {
        columns: sol.basis.iter().map(|&j| cols[j].clone()).collect(),
        values: sol.basis.iter().map(|&j| sol.x[j]).collect(),
        objective: sol.objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{hungarian, AssignmentProblem};

    fn task(id: u64, x: f64, y: f64) -> Task {
        Task {
            task_id: id,
            position: [x, y],
            state: TaskState::Pending,
            seq: id as usize,
        }
    }

    #[test]
    fn distance_costs() {
        let tasks = [task(0, 3.0, 4.0), task(1, 0.0, 1.0)];
        assert_eq!(costs_from_positions(&[0.0, 0.0], &tasks), vec![5.0, 1.0]);
        assert_eq!(costs_from_positions(&[3.0, 4.0], &tasks)[0], 0.0);
    }

    #[test]
    fn translation_keeps_optimal_assignment() {
        let robots = [[0.0, 0.0], [2.0, 1.0], [-1.0, 3.0]];
        let tasks = [task(0, 1.0, 1.0), task(1, -2.0, 2.0), task(2, 3.0, 0.0)];
        let solve = |shift: f64| {
            let moved: Vec<Task> = tasks
                .iter()
                .map(|t| task(t.task_id, t.position[0] + shift, t.position[1] - shift))
                .collect();
            let cost = robots
                .iter()
                .map(|r| costs_from_positions(&[r[0] + shift, r[1] - shift], &moved))
                .collect();
            hungarian(&AssignmentProblem::new(cost).unwrap()).0
        };
        assert_eq!(solve(0.0), solve(17.5));
    }

    #[test]
    fn local_column_structure() {
        let cols = local_columns(2, &[1.0, 2.0, 3.0, 4.0], 4);
        assert_eq!(cols.len(), 4);
        for (k, c) in cols.iter().enumerate() {
            assert_eq!(c.robot(), Some(2));
            assert_eq!(c.task(), Some(k));
            let ones: Vec<usize> = (0..7).filter(|&r| c.a[r] == 1.0).collect();
            let mut expect = vec![2];
            expect.extend(task_row(4, k));
            assert_eq!(ones, expect);
            c.validate(4).unwrap();
        }
        let other = local_columns(1, &[1.0; 4], 4);
        assert!(cols.iter().all(|c| other.iter().all(|o| o.key != c.key)));
    }

    #[test]
    fn malformed_columns_are_rejected() {
        let state = SimplexBasis::artificial(2, 1e6);
        let mut bad = SimplexColumn::real(2, 0, 1, 1.0);
        bad.a[0] = 0.0;
        assert!(matches!(simplex_round(&state, &[], &[bad]), Err(AssignmentError::Protocol(_))));
        let out_of_range = SimplexColumn {
            key: ColumnKey::Real { robot: 5, task: 0 },
            a: vec![0.0; 3],
            cost: 1.0,
        };
        assert!(simplex_round(&state, &[], &[out_of_range]).is_err());
        let nan = SimplexColumn::real(2, 0, 0, f64::NAN);
        assert!(simplex_round(&state, &[], &[nan]).is_err());
    }

    #[test]
    fn single_robot_is_immediately_optimal() {
        let state = SimplexBasis::artificial(1, 1e6);
        let next = simplex_round(&state, &local_columns(0, &[2.5], 1), &[]).unwrap();
        assert_eq!(next.permutation(), Some(vec![0]));
        assert_eq!(next.objective, 2.5);
        let again = simplex_round(&next, &local_columns(0, &[2.5], 1), &[]).unwrap();
        assert_eq!(again, next);
    }

    #[test]
    fn full_pool_gives_global_optimum() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let all: Vec<SimplexColumn> = (0..3).flat_map(|i| local_columns(i, &cost[i], 3)).collect();
        let b = simplex_round(&SimplexBasis::artificial(3, 1e6), &all, &[]).unwrap();
        let (perm, best) = hungarian(&AssignmentProblem::new(cost).unwrap());
        assert_eq!(b.permutation(), Some(perm));
        assert_eq!(b.assignment_cost(), Some(best));
        assert!(!b.has_artificial());
    }

    #[test]
    fn cloud_reveals_on_completion() {
        let pts = |k: usize| (0..k).map(|i| [i as f64, 0.0]).collect::<Vec<_>>();
        let mut cloud = CloudState::new(&pts(4), &pts(4));
        let next = cloud_complete(&mut cloud, 0).unwrap().unwrap();
        assert_eq!(next.task_id, 4);
        assert_eq!(next.seq, 4);
        assert_eq!(cloud.open_tasks().len(), 4);
        assert!(cloud_complete(&mut cloud, 0).is_err());
        assert!(cloud_complete(&mut cloud, 42).is_err());

        let mut small = CloudState::new(&pts(2), &[]);
        assert_eq!(cloud_complete(&mut small, 1).unwrap(), None);
        assert_eq!(small.open_tasks().len(), 1);
        assert!(small.completed.contains(&1));
    }
}
