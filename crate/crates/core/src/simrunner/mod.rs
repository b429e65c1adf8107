//! Scenario orchestration: resolve a config, run it in lockstep, and write
//! `trace.jsonl`, `summary.json` and the resolved `config.json` to an output
//! directory.

mod config;
pub mod metrics;
mod trace;

use std::path::Path;

use serde_json::json;

pub use config::{
    build_config, default_config, parse_config, Overrides, AssignmentParams, CommConfig, ConfigError, ContainmentParams, FormationModel,
    FormationParams, MpcParams, ProfileKind, RendezvousParams, ScenarioConfig, ScenarioKind, CONFIG_VERSION,
};
pub use trace::{
    analyze, export_csv, read_trace, summarize, Analysis, GanttEntry, Summary, TraceError, TraceKind, TraceRecord,
    TraceSink, TRACE_VERSION,
};

use crate::assignment::{dynamic_assignment_loop, AssignmentError, AssignmentEvent, DynamicConfig, SimplexConfig};
use crate::control::TrackerGains;
use crate::dynamics::{IntegratorConfig, RobotState};
use crate::mpc::{bootstrap_plans, DistributedMpc, MpcError};
use crate::runtime::{RuntimeError, Simulation};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

impl RunError {
    /// Process exit code: 2 for bad input, 3 for a failed run.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Trace(_) => 2,
            _ => 3,
        }
    }
}

fn meta(cfg: &ScenarioConfig) -> serde_json::Value {
    let mut m = json!({
        "scenario": cfg.scenario.name(),
        "n": cfg.n,
        "seed": cfg.seed,
        "dt": cfg.dt,
    });
    if let Some(p) = &cfg.containment {
        m["leaders"] = json!(p.leaders);
    }
    if let Some(p) = &cfg.formation {
        m["formation"] = json!(p.pairs);
        m["model"] = json!(p.model);
    }
    if let Some(p) = &cfg.assignment {
        let total = p.initial_tasks.as_ref().map_or(0, Vec::len) + p.hidden_tasks.as_ref().map_or(0, Vec::len);
        m["total_tasks"] = json!(total);
    }
    m
}

fn run_guidance(cfg: &ScenarioConfig, sink: &mut TraceSink) -> Result<(), RunError> {
    let mut sim = Simulation::new(cfg.agent_specs(), cfg.policy()?, cfg.dt)?;
    let poses = |sim: &Simulation, sink: &mut TraceSink, t: f64| -> std::io::Result<()> {
        for (a, pos) in sim.agents().iter().zip(sim.poses()) {
            sink.emit(t, Some(a.id()), TraceKind::Pose, &json!({ "pos": pos, "state": a.state() }))?;
        }
        Ok(())
    };
    for _ in 0..cfg.ticks() {
        let t = sim.time();
        poses(&sim, sink, t)?;
        for rec in sim.step()? {
            sink.emit(t, Some(rec.agent), TraceKind::Input, &json!({ "input": rec.input }))?;
            sink.emit(t, Some(rec.agent), TraceKind::Message, &json!({ "heard": rec.heard }))?;
        }
    }
    poses(&sim, sink, sim.time())?;
    Ok(())
}

fn run_assignment(cfg: &ScenarioConfig, sink: &mut TraceSink) -> Result<(), RunError> {
    let p = cfg.assignment.as_ref().expect("resolved");
    let dc = DynamicConfig {
        robots: p
            .robots
            .as_ref()
            .expect("resolved")
            .iter()
            .map(|r| RobotState::unicycle(r[0], r[1], r[2]))
            .collect(),
        initial_tasks: p.initial_tasks.clone().expect("resolved"),
        hidden_tasks: p.hidden_tasks.clone().expect("resolved"),
        policy: cfg.policy()?,
        integrator: IntegratorConfig::new(cfg.dt),
        gains: TrackerGains::default(),
        simplex: SimplexConfig::default(),
        max_time: cfg.duration(),
    };
    let mut io_err: Option<std::io::Error> = None;
    let mut observe = |e: &AssignmentEvent| {
        if io_err.is_some() {
            return;
        }
        let r = match e {
            AssignmentEvent::Pose { t, robot, state } => {
                sink.emit(*t, Some(*robot), TraceKind::Pose, &json!({ "pos": state.position(), "state": state }))
            }
            AssignmentEvent::Input { t, robot, input } => {
                sink.emit(*t, Some(*robot), TraceKind::Input, &json!({ "input": input }))
            }
            AssignmentEvent::Assigned { t, robot, .. } => sink.emit(*t, Some(*robot), TraceKind::Assignment, e),
            AssignmentEvent::Consensus { t, .. } => sink.emit(*t, None, TraceKind::Assignment, e),
            AssignmentEvent::Complete { t, robot, .. } => sink.emit(*t, Some(*robot), TraceKind::TaskEvent, e),
            AssignmentEvent::TaskList { t, .. } | AssignmentEvent::Reveal { t, .. } => {
                sink.emit(*t, None, TraceKind::TaskEvent, e)
            }
        };
        if let Err(err) = r {
            io_err = Some(err);
        }
    };
    let out = dynamic_assignment_loop(&dc, &mut observe);
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let out = out?;
    sink.emit(out.end_time, None, TraceKind::TaskEvent, &json!({ "event": "end", "finished": out.finished }))?;
    Ok(())
}

fn run_mpc(cfg: &ScenarioConfig, sink: &mut TraceSink) -> Result<(), RunError> {
    let p = cfg.mpc.as_ref().expect("resolved");
    let specs = p.agents.clone().expect("resolved");
    let plans = bootstrap_plans(&specs)?;
    let mut dm = DistributedMpc::new(specs, plans, cfg.policy()?, p.schedule)?;
    let pose = |dm: &DistributedMpc, sink: &mut TraceSink, t: f64| -> std::io::Result<()> {
        for (i, x) in dm.states().iter().enumerate() {
            sink.emit(t, Some(i), TraceKind::Pose, &json!({ "state": x }))?;
        }
        Ok(())
    };
    for k in 0..p.steps {
        let t = k as f64;
        pose(&dm, sink, t)?;
        let specs = dm.specs();
        let states = dm.states();
        let out = dm.step()?;
        let mut stage = 0.0;
        for (i, s) in specs.iter().enumerate() {
            stage += s.stage_cost(&states[i], &out.inputs[i]);
            sink.emit(t, Some(i), TraceKind::Input, &json!({ "input": out.inputs[i], "output": out.outputs[i] }))?;
        }
        sink.emit(t, None, TraceKind::MpcResidual, &json!({ "step": k, "residual": out.residual, "stage_cost": stage }))?;
    }
    pose(&dm, sink, p.steps as f64)?;
    Ok(())
}

/// Run a resolved config, writing its artifacts into `out_dir`. The trace is
/// flushed even when the run fails part-way.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Summary, RunError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let trace_path = out_dir.join("trace.jsonl");
    let mut sink = TraceSink::create(&trace_path)?;
    sink.emit(0.0, None, TraceKind::Meta, &meta(cfg))?;
    let run = match cfg.scenario {
        ScenarioKind::Containment | ScenarioKind::Formation | ScenarioKind::Rendezvous => run_guidance(cfg, &mut sink),
        ScenarioKind::Assignment => run_assignment(cfg, &mut sink),
        ScenarioKind::Mpc => run_mpc(cfg, &mut sink),
    };
    sink.finish()?;
    run?;
    let summary = summarize(&trace_path)?;
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
