//! Dynamic task assignment: a task cloud reveals tasks one-in-one-out while
//! unicycle robots re-run the distributed simplex on every new task list
//! and drive to whatever their current basis assigns them.
//!
//! Everything advances in lockstep ticks of `dt`. The optimization is a
//! per-tick state machine, so a robot keeps driving (and keeps its control
//! loop on schedule) while a new assignment is being negotiated.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::distributed::{SimplexAgent, SimplexConfig};
use super::{cloud_complete, costs_from_positions, AssignmentError, CloudState, Task};
use crate::communicator::{Bus, CommPolicy, Communicator, Payload};
use crate::control::{arrived, track_point, TrackerGains};
use crate::dynamics::{step, ControlInput, IntegratorConfig, RobotState};
use crate::lp::{hungarian, AssignmentProblem};
use crate::netgraph::{is_connected, AgentId, CommGraph};

#[derive(Debug, Clone)]
pub struct DynamicConfig {
    pub robots: Vec<RobotState>,
    pub initial_tasks: Vec<[f64; 2]>,
    pub hidden_tasks: Vec<[f64; 2]>,
    /// Robot-to-robot links. The cloud link is a separate reliable star.
    pub policy: CommPolicy,
    pub integrator: IntegratorConfig,
    pub gains: TrackerGains,
    pub simplex: SimplexConfig,
    /// Give up after this much simulated time, seconds.
    pub max_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AssignmentEvent {
    TaskList { t: f64, epoch: u64, tasks: Vec<u64> },
    Reveal { t: f64, task_id: u64 },
    Assigned { t: f64, robot: AgentId, task_id: u64, epoch: u64 },
    Complete {
        t: f64,
        robot: AgentId,
        task_id: u64,
        reveal_time: f64,
        assign_time: f64,
    },
    Pose { t: f64, robot: AgentId, state: RobotState },
    Input { t: f64, robot: AgentId, input: ControlInput },
    /// Every robot agrees; `optimal` is the centralized optimum for the same costs.
    Consensus { t: f64, epoch: u64, cost: f64, optimal: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GanttRow {
    pub task_id: u64,
    pub reveal_time: f64,
    pub assign_time: f64,
    pub robot: AgentId,
    pub complete_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicOutcome {
    pub gantt: Vec<GanttRow>,
    pub finished: bool,
    pub end_time: f64,
    pub final_states: Vec<RobotState>,
    /// `(epoch, agreed cost, centralized optimum)` per settled epoch.
    pub epochs: Vec<(u64, f64, f64)>,
}

struct Robot {
    id: AgentId,
    net: Communicator,
    uplink: Communicator,
    state: RobotState,
    epoch: Option<u64>,
    /// Task ids for the current epoch, padded with `None` for idle slots.
    slots: Vec<Option<(u64, [f64; 2])>>,
    agent: Option<SimplexAgent>,
    target: Option<(u64, [f64; 2])>,
    assigned_at: BTreeMap<u64, f64>,
    notified: BTreeSet<u64>,
}

fn task_list_payload(epoch: u64, tasks: &[Task]) -> Payload {
    let data = tasks
        .iter()
        .flat_map(|t| [t.task_id as f64, t.position[0], t.position[1]])
        .collect();
    Payload::map([
        ("epoch", Payload::Int(epoch as i64)),
        ("tasks", Payload::matrix(tasks.len(), 3, data)),
    ])
}

fn parse_task_list(p: &Payload) -> Option<(u64, Vec<(u64, [f64; 2])>)> {
    let epoch = p.get("epoch")?.as_int()? as u64;
    let (rows, cols, data) = p.get("tasks")?.as_matrix()?;
    if cols != 3 {
        return None;
    }
    Some((
        epoch,
        (0..rows)
            .map(|r| (data[3 * r] as u64, [data[3 * r + 1], data[3 * r + 2]]))
            .collect(),
    ))
}

fn star(n: usize) -> CommGraph {
    let edges: Vec<(AgentId, AgentId)> = (0..n).map(|i| (n, i)).collect();
    CommGraph::from_undirected_edges(n + 1, &edges).expect("star graph")
}

/// Run the cloud and all robots until every task is completed or
/// `max_time` passes. `observe` sees every event in order.
pub fn dynamic_assignment_loop(
    cfg: &DynamicConfig,
    observe: &mut dyn FnMut(&AssignmentEvent),
) -> Result<DynamicOutcome, AssignmentError> {
    let n = cfg.robots.len();
    if n == 0 {
        return Err(AssignmentError::Input("no robots".into()));
    }
    if cfg.initial_tasks.len() > n {
        return Err(AssignmentError::Input(format!(
            "{} initial tasks for {n} robots",
            cfg.initial_tasks.len()
        )));
    }
    if cfg.policy.graph().n() != n || !is_connected(cfg.policy.graph()) {
        return Err(AssignmentError::Input("robot graph must be connected over all robots".into()));
    }
    let net_bus = Bus::new();
    let cloud_bus = Bus::new();
    let cloud_policy = CommPolicy::static_graph(star(n));
    let mut cloud_comm = Communicator::new(n, cloud_policy.clone(), &cloud_bus)?;
    let mut robots = Vec::with_capacity(n);
    for (i, s) in cfg.robots.iter().enumerate() {
        robots.push(Robot {
            id: i,
            net: Communicator::new(i, cfg.policy.clone(), &net_bus)?,
            uplink: Communicator::new(i, cloud_policy.clone(), &cloud_bus)?,
            state: s.clone(),
            epoch: None,
            slots: Vec::new(),
            agent: None,
            target: None,
            assigned_at: BTreeMap::new(),
            notified: BTreeSet::new(),
        });
    }
    let mut cloud = CloudState::new(&cfg.initial_tasks, &cfg.hidden_tasks);
    let mut reveal_time: BTreeMap<u64, f64> = cloud.revealed.iter().map(|t| (t.task_id, 0.0)).collect();
    let mut gantt = Vec::new();
    let mut epochs = Vec::new();
    let mut epoch = 0u64;
    let mut dirty = true;
    let mut settled_epoch: Option<u64> = None;
    let all: Vec<AgentId> = (0..n).collect();
    let dt = cfg.integrator.dt;
    let steps = (cfg.max_time / dt).ceil() as u64;

    for tick in 0..=steps {
        let t = tick as f64 * dt;
        net_bus.set_time(t);
        cloud_bus.set_time(t);

        // cloud: completions and claims, then a fresh task list if anything changed
        for i in 0..n {
            while let Some(p) = cloud_comm.asynchronous_receive(i)? {
                if let Some(id) = p.get("complete").and_then(Payload::as_int) {
                    let id = id as u64;
                    let open = cloud.open_tasks().iter().any(|t| t.task_id == id);
                    if !open {
                        continue;
                    }
                    let revealed = cloud_complete(&mut cloud, id)?;
                    let row = GanttRow {
                        task_id: id,
                        reveal_time: reveal_time[&id],
                        assign_time: robots[i].assigned_at.get(&id).copied().unwrap_or(t),
                        robot: i,
                        complete_time: t,
                    };
                    observe(&AssignmentEvent::Complete {
                        t,
                        robot: i,
                        task_id: id,
                        reveal_time: row.reveal_time,
                        assign_time: row.assign_time,
                    });
                    gantt.push(row);
                    if let Some(next) = revealed {
                        reveal_time.insert(next.task_id, t);
                        observe(&AssignmentEvent::Reveal { t, task_id: next.task_id });
                    }
                    dirty = true;
                } else if let Some(id) = p.get("claim").and_then(Payload::as_int) {
                    cloud.mark_assigned(id as u64);
                }
            }
        }
        if cloud.is_finished() {
            return Ok(DynamicOutcome {
                gantt,
                finished: true,
                end_time: t,
                final_states: robots.iter().map(|r| r.state.clone()).collect(),
                epochs,
            });
        }
        if dirty {
            epoch += 1;
            let open = cloud.open_tasks();
            observe(&AssignmentEvent::TaskList {
                t,
                epoch,
                tasks: open.iter().map(|t| t.task_id).collect(),
            });
            cloud_comm.send(&task_list_payload(epoch, &open), &all, tick)?;
            dirty = false;
        }

        // robots: pick up task lists and restart the negotiation
        let mut epoch_costs: Option<Vec<Vec<f64>>> = None;
        for r in robots.iter_mut() {
            let mut latest = None;
            while let Some(p) = r.uplink.asynchronous_receive(n)? {
                if let Some(list) = parse_task_list(&p) {
                    latest = Some(list);
                }
            }
            let Some((e, tasks)) = latest else { continue };
            if r.epoch.is_some_and(|cur| cur >= e) {
                continue;
            }
            if tasks.len() > n {
                return Err(AssignmentError::Cloud(format!("{} open tasks for {n} robots", tasks.len())));
            }
            let as_tasks: Vec<Task> = tasks
                .iter()
                .map(|&(id, p)| Task {
                    task_id: id,
                    position: p,
                    state: super::TaskState::Pending,
                    seq: 0,
                })
                .collect();
            let mut costs = costs_from_positions(&r.state.position(), &as_tasks);
            costs.resize(n, 0.0);
            r.slots = tasks.into_iter().map(Some).collect();
            r.slots.resize(n, None);
            r.agent = Some(SimplexAgent::new(r.id, &costs, r.net.in_neighbors().to_vec(), &cfg.simplex)?);
            r.epoch = Some(e);
            epoch_costs.get_or_insert_with(|| vec![Vec::new(); n])[r.id] = costs;
        }
        if let Some(c) = epoch_costs {
            if c.iter().all(|row| row.len() == n) {
                pending_costs(&mut epochs, epoch, c);
            }
        }

        // one simplex round per tick
        for r in robots.iter_mut() {
            if let (Some(a), Some(e)) = (&r.agent, r.epoch) {
                let msg = Payload::map([("epoch", Payload::Int(e as i64)), ("simplex", a.message(false))]);
                let outs = r.net.out_neighbors().to_vec();
                r.net.exchange_send(&msg, &outs, tick)?;
            }
        }
        for r in robots.iter_mut() {
            let (Some(a), Some(e)) = (r.agent.as_mut(), r.epoch) else { continue };
            let ins = r.net.in_neighbors().to_vec();
            let got = match r.net.exchange_collect(&ins, tick) {
                Ok(m) => m,
                Err(crate::communicator::CommError::Timeout { .. }) => BTreeMap::new(),
                Err(err) => return Err(err.into()),
            };
            for (j, p) in got {
                let same = p.get("epoch").and_then(Payload::as_int) == Some(e as i64);
                if let (true, Some(inner)) = (same, p.get("simplex")) {
                    let _ = a.absorb(j, inner);
                }
            }
            a.advance()?;
            if a.is_halted() {
                let slot = a
                    .task()
                    .and_then(|k| r.slots.get(k).copied().flatten())
                    .filter(|s| !r.notified.contains(&s.0));
                if slot.map(|s| s.0) != r.target.map(|s| s.0) {
                    if let Some((id, _)) = slot {
                        r.assigned_at.insert(id, t);
                        observe(&AssignmentEvent::Assigned { t, robot: r.id, task_id: id, epoch: e });
                        r.uplink.send(&Payload::map([("claim", Payload::Int(id as i64))]), &[n], tick)?;
                    }
                    r.target = slot;
                }
            }
        }
        if settled_epoch != Some(epoch) && robots.iter().all(|r| r.epoch == Some(epoch)) {
            let agents: Vec<&SimplexAgent> = robots.iter().filter_map(|r| r.agent.as_ref()).collect();
            if agents.iter().all(|a| a.is_halted()) {
                settled_epoch = Some(epoch);
                if let Some(entry) = epochs.iter_mut().find(|e| e.0 == epoch) {
                    entry.1 = agents[0].basis().assignment_cost().unwrap_or(f64::NAN);
                    observe(&AssignmentEvent::Consensus {
                        t,
                        epoch,
                        cost: entry.1,
                        optimal: entry.2,
                    });
                }
            }
        }

        // control and dynamics
        for r in robots.iter_mut() {
            observe(&AssignmentEvent::Pose {
                t,
                robot: r.id,
                state: r.state.clone(),
            });
            let zero = match r.state {
                RobotState::Unicycle { .. } => ControlInput::UnicycleCmd { v: 0.0, omega: 0.0 },
                _ => ControlInput::Velocity {
                    u: vec![0.0; r.state.position().len()],
                },
            };
            let input = match r.target {
                Some((id, p)) if arrived(&r.state, p, &cfg.gains) => {
                    r.uplink.send(&Payload::map([("complete", Payload::Int(id as i64))]), &[n], tick)?;
                    r.notified.insert(id);
                    r.target = None;
                    zero
                }
                Some((_, p)) => track_point(&r.state, p, &cfg.gains),
                None => zero,
            };
            observe(&AssignmentEvent::Input {
                t,
                robot: r.id,
                input: input.clone(),
            });
            r.state = step(&r.state, &input, &cfg.integrator)
                .map_err(|e| AssignmentError::Input(e.to_string()))?;
        }
    }
    Ok(DynamicOutcome {
        gantt,
        finished: false,
        end_time: steps as f64 * dt,
        final_states: robots.iter().map(|r| r.state.clone()).collect(),
        epochs,
    })
}

fn pending_costs(epochs: &mut Vec<(u64, f64, f64)>, epoch: u64, costs: Vec<Vec<f64>>) {
    let optimal = AssignmentProblem::new(costs).map(|p| hungarian(&p).1).unwrap_or(f64::NAN);
    epochs.push((epoch, f64::NAN, optimal));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::CommGraph;

    fn config(robots: Vec<RobotState>, initial: Vec<[f64; 2]>, hidden: Vec<[f64; 2]>) -> DynamicConfig {
        let n = robots.len();
        DynamicConfig {
            robots,
            initial_tasks: initial,
            hidden_tasks: hidden,
            policy: CommPolicy::static_graph(CommGraph::complete(n)),
            integrator: IntegratorConfig::new(0.01),
            gains: TrackerGains::default(),
            simplex: SimplexConfig::default(),
            max_time: 120.0,
        }
    }

    #[test]
    fn robot_on_its_task_completes_immediately() {
        let cfg = config(vec![RobotState::unicycle(1.0, 1.0, 0.0)], vec![[1.0, 1.0]], vec![]);
        let out = dynamic_assignment_loop(&cfg, &mut |_| {}).unwrap();
        assert!(out.finished);
        assert_eq!(out.gantt.len(), 1);
        assert!(out.end_time < 0.1, "finished at {}", out.end_time);
    }

    #[test]
    fn four_robots_eight_tasks() {
        let robots = (0..4).map(|i| RobotState::unicycle(i as f64, 0.0, 0.0)).collect();
        let initial = vec![[0.0, 1.0], [1.0, 1.5], [2.0, 1.0], [3.0, 1.5]];
        let hidden = vec![[0.5, -1.0], [1.5, -1.0], [2.5, -1.0], [3.5, -1.0]];
        let mut events = Vec::new();
        let out = dynamic_assignment_loop(&config(robots, initial, hidden), &mut |e| {
            if !matches!(e, AssignmentEvent::Pose { .. } | AssignmentEvent::Input { .. }) {
                events.push(e.clone());
            }
        })
        .unwrap();
        assert!(out.finished);
        assert_eq!(out.gantt.len(), 8);
        let mut ids: Vec<u64> = out.gantt.iter().map(|g| g.task_id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..8).collect::<Vec<_>>());
        for (epoch, cost, optimal) in &out.epochs {
            assert!(cost.is_nan() || cost == optimal, "epoch {epoch}: {cost} vs {optimal}");
        }
    }

    #[test]
    fn closer_reveal_switches_target() {
        // Robot 0 heads to the far task 0; completing task 1 reveals task 2
        // right next to robot 0, which then takes it and leaves task 0 to robot 1.
        let robots = vec![RobotState::unicycle(0.0, 0.0, 0.0), RobotState::unicycle(6.0, 0.0, 0.0)];
        let initial = vec![[3.0, 0.0], [6.0, 0.0]];
        let hidden = vec![[0.5, 0.0]];
        let mut assigned = Vec::new();
        let out = dynamic_assignment_loop(&config(robots, initial, hidden), &mut |e| {
            if let AssignmentEvent::Assigned { robot, task_id, .. } = e {
                assigned.push((*robot, *task_id));
            }
        })
        .unwrap();
        assert!(out.finished);
        let r0: Vec<u64> = assigned.iter().filter(|a| a.0 == 0).map(|a| a.1).collect();
        assert_eq!(r0.first(), Some(&0));
        assert!(r0.contains(&2));
        let done_by = |id: u64| out.gantt.iter().find(|g| g.task_id == id).unwrap().robot;
        assert_eq!(done_by(2), 0);
        assert_eq!(done_by(0), 1);
    }
}
