//! Replanning rounds, closed-loop steps and the message-passing version
//! in which agents only learn each other's outputs through the bus.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{build_local_ocp, shift_plan, MpcError, OcpSpec, Plan, Polyhedron, COUPLING_TOL};
use crate::communicator::{Bus, CommPolicy, Communicator, Payload, Profile};
use crate::lp::{LpBuilder, LpStatus, Sense, VarKind};
use crate::netgraph::AgentId;

/// Which agents replan in a closed-loop step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanSchedule {
    /// Every agent replans once per step, one after another, starting from
    /// `step mod N`.
    #[default]
    Sweep,
    /// Only agent `step mod N` replans; the others follow their shifted plans.
    RoundRobin,
}

impl ReplanSchedule {
    pub fn turns(self, step: u64, n: usize) -> Vec<AgentId> {
        let first = (step % n as u64) as usize;
        match self {
            ReplanSchedule::Sweep => (0..n).map(|k| (first + k) % n).collect(),
            ReplanSchedule::RoundRobin => vec![first],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplanOutcome {
    pub agent: AgentId,
    pub replaced: bool,
    pub old_cost: f64,
    pub new_cost: Option<f64>,
    pub warning: Option<String>,
}

fn coupling_of(specs: &[OcpSpec]) -> Result<&Polyhedron, MpcError> {
    let first = &specs.first().ok_or_else(|| MpcError::Shape("no agents".into()))?.coupling;
    if specs.iter().any(|s| &s.coupling != first) {
        return Err(MpcError::Shape("agents disagree on the coupling set".into()));
    }
    Ok(first)
}

fn sum_outputs<'a>(plans: impl Iterator<Item = &'a Vec<Vec<f64>>>, t_h: usize, r: usize) -> Vec<Vec<f64>> {
    let mut sum = vec![vec![0.0; r]; t_h];
    for outs in plans {
        for (acc, z) in sum.iter_mut().zip(outs) {
            for (a, v) in acc.iter_mut().zip(z) {
                *a += v;
            }
        }
    }
    sum
}

/// Largest coupling violation `max_t max_k (H Σ_i z_i(t) − h)_k` over the
/// horizon, or `None` when the coupling set is the whole space.
pub fn joint_residual(specs: &[OcpSpec], plans: &[Plan]) -> Result<Option<f64>, MpcError> {
    let set = coupling_of(specs)?;
    let t_h = specs[0].horizon;
    let sum = sum_outputs(plans.iter().map(|p| &p.outputs), t_h, set.dim);
    Ok(sum.iter().filter_map(|z| set.violation(z)).reduce(f64::max))
}

fn check_joint(specs: &[OcpSpec], plans: &[Plan]) -> Result<(), MpcError> {
    if specs.len() != plans.len() {
        return Err(MpcError::Shape(format!("{} specs, {} plans", specs.len(), plans.len())));
    }
    for (i, (s, p)) in specs.iter().zip(plans).enumerate() {
        if s.horizon != specs[0].horizon {
            return Err(MpcError::Shape("agents must share the horizon".into()));
        }
        p.check_consistent(s)?;
        if p.states[0].iter().zip(&s.model.x0).any(|(a, b)| (a - b).abs() > super::PLAN_TOL) {
            return Err(MpcError::Plan(format!("plan {i} does not start at the current state")));
        }
        if !p.locally_feasible(s) {
            return Err(MpcError::Feasibility(format!("plan {i} violates its local constraints")));
        }
    }
    if let Some(res) = joint_residual(specs, plans)? {
        if res > COUPLING_TOL {
            return Err(MpcError::Feasibility(format!("plans violate the coupling by {res:e}")));
        }
    }
    let set = coupling_of(specs)?;
    let tail: Vec<f64> = (0..set.dim).map(|k| specs.iter().map(|s| s.terminal_output()[k]).sum()).collect();
    if !set.contains(&tail, COUPLING_TOL) {
        return Err(MpcError::Feasibility("terminal outputs violate the coupling".into()));
    }
    Ok(())
}

/// Replan one agent against the others' summed outputs. The new plan is
/// kept only if it does not cost more than the current one.
fn replan(spec: &OcpSpec, current: &mut Plan, others: &[Vec<f64>], agent: AgentId) -> Result<ReplanOutcome, MpcError> {
    let old_cost = current.cost(spec);
    let fresh = build_local_ocp(spec, others)?.solve(spec)?;
    let Some(plan) = fresh else {
        let joint_ok = current
            .outputs
            .iter()
            .zip(others)
            .all(|(z, o)| spec.coupling.contains(&super::add(z, o), COUPLING_TOL));
        if !joint_ok || !current.locally_feasible(spec) {
            return Err(MpcError::Feasibility(format!("agent {agent} has no feasible plan")));
        }
        return Ok(ReplanOutcome {
            agent,
            replaced: false,
            old_cost,
            new_cost: None,
            warning: Some(format!("agent {agent}: local problem infeasible, keeping previous plan")),
        });
    };
    let new_cost = plan.cost(spec);
    let replaced = new_cost <= old_cost + 1e-9;
    if replaced {
        *current = plan;
    }
    Ok(ReplanOutcome {
        agent,
        replaced,
        old_cost,
        new_cost: Some(new_cost),
        warning: None,
    })
}

/// Agent `turn` replans against the other agents' stored outputs.
pub fn mpc_round(specs: &[OcpSpec], plans: &mut [Plan], turn: AgentId) -> Result<ReplanOutcome, MpcError> {
    check_joint(specs, plans)?;
    if turn >= specs.len() {
        return Err(MpcError::Shape(format!("turn {turn} for {} agents", specs.len())));
    }
    let r = specs[0].coupling.dim;
    let others = sum_outputs(
        plans.iter().enumerate().filter(|(j, _)| *j != turn).map(|(_, p)| &p.outputs),
        specs[0].horizon,
        r,
    );
    replan(&specs[turn], &mut plans[turn], &others, turn)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub inputs: Vec<Vec<f64>>,
    /// Outputs at the applied step.
    pub outputs: Vec<Vec<f64>>,
    pub next_states: Vec<Vec<f64>>,
    /// Coupling violation at the applied step; `None` when vacuous.
    pub residual: Option<f64>,
    pub replans: Vec<ReplanOutcome>,
}

fn apply_and_shift(specs: &mut [OcpSpec], plans: &mut [Plan], replans: Vec<ReplanOutcome>) -> Result<StepOutcome, MpcError> {
    let set = coupling_of(specs)?.clone();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut next_states = Vec::new();
    for (s, p) in specs.iter().zip(plans.iter()) {
        let u = p.inputs[0].clone();
        outputs.push(s.model.output(&s.model.x0, &u));
        next_states.push(s.model.next_state(&s.model.x0, &u));
        inputs.push(u);
    }
    let total: Vec<f64> = (0..set.dim).map(|k| outputs.iter().map(|z| z[k]).sum()).collect();
    let residual = set.violation(&total);
    if residual.is_some_and(|r| r > COUPLING_TOL) {
        return Err(MpcError::Feasibility(format!("applied outputs violate the coupling by {:e}", residual.unwrap())));
    }
    for ((s, p), x) in specs.iter_mut().zip(plans.iter_mut()).zip(&next_states) {
        *p = shift_plan(p, s)?;
        s.model.x0 = x.clone();
        p.states[0] = x.clone();
    }
    // recursive feasibility: the shifted plans must again be jointly feasible
    check_joint(specs, plans)?;
    Ok(StepOutcome {
        inputs,
        outputs,
        next_states,
        residual,
        replans,
    })
}

/// One closed-loop step: replan per `schedule`, apply every agent's first
/// input, and shift all plans. `specs[i].model.x0` tracks the current state.
pub fn mpc_step(
    specs: &mut [OcpSpec],
    plans: &mut [Plan],
    step: u64,
    schedule: ReplanSchedule,
) -> Result<StepOutcome, MpcError> {
    let mut replans = Vec::new();
    for turn in schedule.turns(step, specs.len()) {
        replans.push(mpc_round(specs, plans, turn)?);
    }
    apply_and_shift(specs, plans, replans)
}

/// Jointly feasible starting plans from one centralized feasibility LP.
/// Test and setup scaffolding: the agents never solve this themselves.
pub fn bootstrap_plans(specs: &[OcpSpec]) -> Result<Vec<Plan>, MpcError> {
    let set = coupling_of(specs)?.clone();
    let t_h = specs[0].horizon;
    for s in specs {
        s.validate()?;
        if s.horizon != t_h {
            return Err(MpcError::Shape("agents must share the horizon".into()));
        }
    }
    let mut b = LpBuilder::new();
    // per agent: inputs u[t] and states x[t], t = 0..=T (x[0] pinned)
    let mut all_u = Vec::new();
    let mut all_z = Vec::new();
    for s in specs {
        let (n, m) = (s.model.nx(), s.model.nu());
        let xs: Vec<Vec<usize>> = (0..=t_h).map(|_| (0..n).map(|_| b.var(VarKind::Free, 0.0)).collect()).collect();
        let us: Vec<Vec<usize>> = (0..t_h).map(|_| (0..m).map(|_| b.var(VarKind::Free, 0.0)).collect()).collect();
        for k in 0..n {
            b.constraint(vec![(xs[0][k], 1.0)], Sense::Eq, s.model.x0[k]);
            b.constraint(vec![(xs[t_h][k], 1.0)], Sense::Eq, s.terminal.state[k]);
        }
        for t in 0..t_h {
            for k in 0..n {
                let mut terms = vec![(xs[t + 1][k], 1.0)];
                terms.extend((0..n).map(|j| (xs[t][j], -s.model.a[(k, j)])));
                terms.extend((0..m).map(|j| (us[t][j], -s.model.b[(k, j)])));
                b.constraint(terms, Sense::Eq, 0.0);
            }
            if let Some(set) = &s.input_set {
                for (row, g) in set.h.iter().zip(&set.g) {
                    b.constraint(row.iter().enumerate().map(|(k, &h)| (us[t][k], h)).collect(), Sense::Le, *g);
                }
            }
        }
        if let Some(set) = &s.state_set {
            for x in &xs[1..] {
                for (row, g) in set.h.iter().zip(&set.g) {
                    b.constraint(row.iter().enumerate().map(|(k, &h)| (x[k], h)).collect(), Sense::Le, *g);
                }
            }
        }
        // z[t] as terms over x[t], u[t]
        let zs: Vec<Vec<Vec<(usize, f64)>>> = (0..t_h)
            .map(|t| {
                (0..s.model.nz())
                    .map(|i| {
                        let mut terms: Vec<(usize, f64)> = (0..n).map(|k| (xs[t][k], s.model.c[(i, k)])).collect();
                        if s.model.d.cols() == m {
                            terms.extend((0..m).map(|k| (us[t][k], s.model.d[(i, k)])));
                        }
                        terms
                    })
                    .collect()
            })
            .collect();
        all_u.push(us);
        all_z.push(zs);
    }
    for t in 0..t_h {
        for (row, g) in set.h.iter().zip(&set.g) {
            let mut terms = Vec::new();
            for zs in &all_z {
                for (i, &h) in row.iter().enumerate() {
                    terms.extend(zs[t][i].iter().map(|&(v, c)| (v, h * c)));
                }
            }
            b.constraint(terms, Sense::Le, *g);
        }
    }
    let sol = b.solve()?;
    if sol.status != LpStatus::Optimal {
        return Err(MpcError::Feasibility("no jointly feasible initial plans".into()));
    }
    let plans: Vec<Plan> = specs
        .iter()
        .zip(&all_u)
        .map(|(s, us)| {
            let inputs = us.iter().map(|row| row.iter().map(|&v| sol.values[v]).collect()).collect();
            Plan::from_inputs(&s.model, &s.model.x0, inputs)
        })
        .collect();
    check_joint(specs, &plans)?;
    Ok(plans)
}

/// One row of the closed-loop trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcTraceRow {
    pub step: u64,
    pub agent: AgentId,
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub coupling_residual: Option<f64>,
}

struct MpcAgent {
    spec: OcpSpec,
    plan: Plan,
    comm: Communicator,
    /// Latest output plan and terminal output heard from each other agent.
    others: BTreeMap<AgentId, (Vec<Vec<f64>>, Vec<f64>)>,
}

impl MpcAgent {
    fn message(&self, id: AgentId, step: u64) -> Payload {
        let t_h = self.plan.outputs.len();
        let r = self.spec.coupling.dim;
        Payload::map([
            ("agent", Payload::Int(id as i64)),
            ("step_index", Payload::Int(step as i64)),
            ("outputs", Payload::matrix(t_h, r, self.plan.outputs.concat())),
            ("terminal", Payload::Vector(self.spec.terminal_output())),
        ])
    }

    fn store(&mut self, from: AgentId, p: &Payload) -> Result<(), MpcError> {
        let bad = || MpcError::Plan(format!("malformed plan message from {from}"));
        let (rows, cols, data) = p.get("outputs").and_then(Payload::as_matrix).ok_or_else(bad)?;
        let term = p.get("terminal").and_then(Payload::as_vector).ok_or_else(bad)?;
        if rows != self.spec.horizon || cols != self.spec.coupling.dim || term.len() != cols {
            return Err(bad());
        }
        let outs = data.chunks(cols.max(1)).take(rows).map(<[f64]>::to_vec).collect();
        self.others.insert(from, (outs, term.to_vec()));
        Ok(())
    }

    fn others_sum(&self) -> Vec<Vec<f64>> {
        sum_outputs(self.others.values().map(|(o, _)| o), self.spec.horizon, self.spec.coupling.dim)
    }
}

/// Closed-loop distributed MPC where each agent keeps its own copy of the
/// others' output plans, updated only from received messages. Requires a
/// reliable profile over a complete graph.
pub struct DistributedMpc {
    agents: Vec<MpcAgent>,
    schedule: ReplanSchedule,
    step: u64,
    tag: u64,
    _bus: Bus,
}

impl DistributedMpc {
    pub fn new(specs: Vec<OcpSpec>, plans: Vec<Plan>, policy: CommPolicy, schedule: ReplanSchedule) -> Result<Self, MpcError> {
        check_joint(&specs, &plans)?;
        let n = specs.len();
        if policy.profile != Profile::Static {
            return Err(MpcError::Shape("plan exchange needs a static reliable communicator".into()));
        }
        let g = policy.graph();
        if g.n() != n || (0..n).any(|i| (0..n).any(|j| i != j && !g.has_edge(i, j))) {
            return Err(MpcError::Shape("plan exchange needs a complete graph over all agents".into()));
        }
        let bus = Bus::new();
        let mut agents = Vec::with_capacity(n);
        for (i, (spec, plan)) in specs.into_iter().zip(plans).enumerate() {
            agents.push(MpcAgent {
                spec,
                plan,
                comm: Communicator::new(i, policy.clone(), &bus)?,
                others: BTreeMap::new(),
            });
        }
        let mut me = Self {
            agents,
            schedule,
            step: 0,
            tag: 0,
            _bus: bus,
        };
        for i in 0..n {
            me.broadcast(i)?;
        }
        Ok(me)
    }

    fn broadcast(&mut self, from: AgentId) -> Result<(), MpcError> {
        let n = self.agents.len();
        let tag = self.tag;
        self.tag += 1;
        let others: Vec<AgentId> = (0..n).filter(|&j| j != from).collect();
        let msg = self.agents[from].message(from, self.step);
        self.agents[from].comm.send(&msg, &others, tag)?;
        for j in others {
            let timeout = self.agents[j].comm.policy().transport.recv_timeout;
            let p = self.agents[j].comm.receive(from, tag, timeout)?;
            self.agents[j].store(from, &p)?;
        }
        Ok(())
    }

    pub fn plans(&self) -> Vec<Plan> {
        self.agents.iter().map(|a| a.plan.clone()).collect()
    }

    pub fn specs(&self) -> Vec<OcpSpec> {
        self.agents.iter().map(|a| a.spec.clone()).collect()
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(|a| a.spec.model.x0.clone()).collect()
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Replan per schedule, broadcasting each new plan, then apply and shift.
    pub fn step(&mut self) -> Result<StepOutcome, MpcError> {
        let n = self.agents.len();
        let mut replans = Vec::new();
        for turn in self.schedule.turns(self.step, n) {
            let a = &mut self.agents[turn];
            let others = a.others_sum();
            replans.push(replan(&a.spec, &mut a.plan, &others, turn)?);
            self.broadcast(turn)?;
        }
        let mut specs = self.specs();
        let mut plans = self.plans();
        let out = apply_and_shift(&mut specs, &mut plans, replans)?;
        for ((a, s), p) in self.agents.iter_mut().zip(specs).zip(plans) {
            a.spec = s;
            a.plan = p;
            for (outs, term) in a.others.values_mut() {
                outs.remove(0);
                outs.push(term.clone());
            }
        }
        self.step += 1;
        Ok(out)
    }

    /// Run `steps` closed-loop steps and return the trace rows.
    pub fn run(&mut self, steps: usize) -> Result<Vec<MpcTraceRow>, MpcError> {
        let mut rows = Vec::new();
        for _ in 0..steps {
            let k = self.step;
            let before = self.states();
            let out = self.step()?;
            for (i, x) in before.into_iter().enumerate() {
                rows.push(MpcTraceRow {
                    step: k,
                    agent: i,
                    state: x,
                    input: out.inputs[i].clone(),
                    output: out.outputs[i].clone(),
                    coupling_residual: out.residual,
                });
            }
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Equilibrium, LinearAgentModel, StageCost};
    use super::*;
    use crate::netgraph::CommGraph;

    fn scalar(x0: f64, coupling: Polyhedron) -> OcpSpec {
        OcpSpec {
            model: LinearAgentModel::integrator(1, vec![x0]),
            horizon: 4,
            state_set: None,
            input_set: Some(Polyhedron::boxed(&[-1.0], &[1.0])),
            coupling,
            cost: StageCost {
                state_weights: vec![1.0],
                input_weights: vec![0.1],
                state_ref: Some(vec![1.0]),
                input_ref: Some(vec![0.0]),
            },
            terminal: Equilibrium {
                state: vec![0.0],
                input: vec![0.0],
            },
        }
    }

    fn coupled_pair() -> Vec<OcpSpec> {
        let s = Polyhedron::boxed(&[f64::NEG_INFINITY], &[1.0]);
        vec![scalar(0.0, s.clone()), scalar(0.5, s)]
    }

    #[test]
    fn coupled_round_keeps_sum_bounded() {
        let specs = coupled_pair();
        let mut plans = bootstrap_plans(&specs).unwrap();
        for turn in [0, 1, 0, 1] {
            mpc_round(&specs, &mut plans, turn).unwrap();
            assert!(joint_residual(&specs, &plans).unwrap().unwrap() <= COUPLING_TOL);
        }
    }

    #[test]
    fn optimal_plans_are_a_fixed_point() {
        let specs = coupled_pair();
        let mut plans = bootstrap_plans(&specs).unwrap();
        for _ in 0..4 {
            for turn in 0..2 {
                mpc_round(&specs, &mut plans, turn).unwrap();
            }
        }
        let before = plans.clone();
        let out = mpc_round(&specs, &mut plans, 0).unwrap();
        assert!(out.new_cost.unwrap() >= out.old_cost - 1e-9);
        assert_eq!(plans[1], before[1]);
        assert!((plans[0].cost(&specs[0]) - before[0].cost(&specs[0])).abs() < 1e-9);
    }

    #[test]
    fn equilibrium_start_stays_put() {
        let mut specs = vec![scalar(0.0, Polyhedron::whole(1))];
        specs[0].cost.state_ref = None;
        let mut plans = vec![Plan::at_equilibrium(&specs[0])];
        for k in 0..10 {
            let out = mpc_step(&mut specs, &mut plans, k, ReplanSchedule::Sweep).unwrap();
            assert_eq!(out.next_states, vec![vec![0.0]]);
        }
    }

    #[test]
    fn messages_reproduce_shared_memory_rounds() {
        let specs = coupled_pair();
        let plans = bootstrap_plans(&specs).unwrap();
        for schedule in [ReplanSchedule::Sweep, ReplanSchedule::RoundRobin] {
            let mut dm = DistributedMpc::new(
                specs.clone(),
                plans.clone(),
                CommPolicy::static_graph(CommGraph::complete(2)),
                schedule,
            )
            .unwrap();
            let (mut s2, mut p2) = (specs.clone(), plans.clone());
            for k in 0..12 {
                let a = dm.step().unwrap();
                let b = mpc_step(&mut s2, &mut p2, k, schedule).unwrap();
                assert_eq!(a.next_states, b.next_states);
                assert!(a.residual.unwrap() <= COUPLING_TOL);
            }
        }
    }

    #[test]
    fn infeasible_joint_start_is_rejected() {
        let specs = coupled_pair();
        let mut plans = bootstrap_plans(&specs).unwrap();
        plans[0].outputs[1][0] += 5.0;
        assert!(mpc_round(&specs, &mut plans, 0).is_err());
        assert!(DistributedMpc::new(specs, plans, CommPolicy::static_graph(CommGraph::complete(2)), ReplanSchedule::Sweep).is_err());
    }
}
