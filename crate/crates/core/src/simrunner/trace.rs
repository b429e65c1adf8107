//! Line-delimited trace records and everything derived from them after a
//! run: summaries and plot-ready CSV tables.
//!
//! Record schema (one JSON object per line):
//!
//! | field   | type            | meaning                                        |
//! |---------|-----------------|------------------------------------------------|
//! | `v`     | integer         | schema version, currently 1                    |
//! | `t`     | number          | simulated time, seconds                        |
//! | `agent` | integer or null | agent id; null for run-level records           |
//! | `kind`  | string          | `meta`, `pose`, `input`, `message`, `assignment`, `task_event`, `mpc_residual` |
//! | `data`  | object          | kind-specific payload                          |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::metrics::{hull_distance, spread};
use crate::guidance::FormationSpec;
use crate::netgraph::AgentId;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: schema version {found}, expected {TRACE_VERSION}")]
    Version { line: usize, found: u32 },
    #[error("trace line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("trace line {line}: time {t} goes backwards for agent {agent:?}")]
    Order { line: usize, t: f64, agent: Option<AgentId> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Meta,
    Pose,
    Input,
    Message,
    Assignment,
    TaskEvent,
    MpcResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub v: u32,
    pub t: f64,
    pub agent: Option<AgentId>,
    pub kind: TraceKind,
    pub data: Value,
}

/// Single writer for a run's trace file.
pub struct TraceSink {
    out: BufWriter<File>,
    records: u64,
}

impl TraceSink {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            records: 0,
        })
    }

    pub fn emit<T: Serialize>(&mut self, t: f64, agent: Option<AgentId>, kind: TraceKind, data: &T) -> std::io::Result<()> {
        let rec = TraceRecord {
            v: TRACE_VERSION,
            t,
            agent,
            kind,
            data: serde_json::to_value(data)?,
        };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n")?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> std::io::Result<u64> {
        self.out.flush()?;
        Ok(self.records)
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    let mut last: BTreeMap<Option<AgentId>, f64> = BTreeMap::new();
    for (k, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
            line: k + 1,
            msg: e.to_string(),
        })?;
        let found = v.get("v").and_then(Value::as_u64).ok_or_else(|| TraceError::Malformed {
            line: k + 1,
            msg: "missing schema version".into(),
        })?;
        if found != TRACE_VERSION as u64 {
            return Err(TraceError::Version {
                line: k + 1,
                found: found as u32,
            });
        }
        let rec: TraceRecord = serde_json::from_value(v).map_err(|e| TraceError::Malformed {
            line: k + 1,
            msg: e.to_string(),
        })?;
        if last.get(&rec.agent).is_some_and(|&prev| rec.t < prev) {
            return Err(TraceError::Order {
                line: k + 1,
                t: rec.t,
                agent: rec.agent,
            });
        }
        last.insert(rec.agent, rec.t);
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Option<String>,
    pub n: usize,
    pub seed: Option<u64>,
    pub records: usize,
    pub end_time: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanttEntry {
    pub task_id: u64,
    pub reveal: f64,
    pub start: f64,
    pub end: f64,
    pub robot: AgentId,
}

/// Time series and tables recovered from a trace.
#[derive(Debug, Clone, Default)]
pub struct Analysis {
    pub summary: Summary,
    pub hull_distance: Vec<(f64, f64)>,
    pub formation_error: Vec<(f64, f64)>,
    pub spread: Vec<(f64, f64)>,
    pub coupling_residual: Vec<(f64, f64)>,
    pub gantt: Vec<GanttEntry>,
}

#[derive(Default)]
struct Meta {
    scenario: Option<String>,
    n: usize,
    seed: Option<u64>,
    leaders: Vec<AgentId>,
    formation: Option<FormationSpec>,
    total_tasks: Option<usize>,
}

fn pos_of(data: &Value) -> Option<Vec<f64>> {
    data.get("pos")?.as_array()?.iter().map(Value::as_f64).collect()
}

impl Analysis {
    fn flush_group(&mut self, meta: &Meta, t: f64, group: &BTreeMap<AgentId, Vec<f64>>) {
        if group.len() != meta.n || meta.n == 0 {
            return;
        }
        let pts: Vec<Vec<f64>> = group.values().cloned().collect();
        match meta.scenario.as_deref() {
            Some("containment") => {
                let leaders: Vec<[f64; 2]> = meta
                    .leaders
                    .iter()
                    .filter_map(|l| group.get(l))
                    .filter(|p| p.len() == 2)
                    .map(|p| [p[0], p[1]])
                    .collect();
                let d = group
                    .iter()
                    .filter(|(i, p)| !meta.leaders.contains(i) && p.len() == 2)
                    .map(|(_, p)| hull_distance([p[0], p[1]], &leaders))
                    .fold(0.0, f64::max);
                self.hull_distance.push((t, d));
            }
            Some("formation") => {
                if let Some(f) = &meta.formation {
                    self.formation_error.push((t, f.error(&pts)));
                }
            }
            Some("rendezvous") => self.spread.push((t, spread(&pts))),
            _ => {}
        }
    }
}

fn field<T: for<'de> Deserialize<'de>>(data: &Value, key: &str) -> Option<T> {
    data.get(key).and_then(|v| serde_json::from_value(v.clone()).ok())
}

pub fn analyze(records: &[TraceRecord]) -> Analysis {
    let mut a = Analysis::default();
    let mut meta = Meta::default();
    let mut group: BTreeMap<AgentId, Vec<f64>> = BTreeMap::new();
    let mut group_t: Option<f64> = None;
    let mut stage_cost = 0.0;
    let mut consensus = Vec::new();
    for r in records {
        a.summary.end_time = a.summary.end_time.max(r.t);
        match r.kind {
            TraceKind::Meta => {
                meta.scenario = field(&r.data, "scenario");
                meta.n = field(&r.data, "n").unwrap_or(0);
                meta.seed = field(&r.data, "seed");
                meta.leaders = field(&r.data, "leaders").unwrap_or_default();
                meta.formation = field(&r.data, "formation");
                meta.total_tasks = field(&r.data, "total_tasks");
            }
            TraceKind::Pose => {
                if group_t != Some(r.t) {
                    if let Some(t) = group_t {
                        a.flush_group(&meta, t, &group);
                    }
                    group.clear();
                    group_t = Some(r.t);
                }
                if let (Some(i), Some(p)) = (r.agent, pos_of(&r.data)) {
                    group.insert(i, p);
                }
            }
            TraceKind::TaskEvent if r.data.get("event").and_then(Value::as_str) == Some("complete") => {
                if let (Some(task_id), Some(robot), Some(reveal), Some(start)) = (
                    field(&r.data, "task_id"),
                    field(&r.data, "robot"),
                    field(&r.data, "reveal_time"),
                    field(&r.data, "assign_time"),
                ) {
                    a.gantt.push(GanttEntry {
                        task_id,
                        reveal,
                        start,
                        end: r.t,
                        robot,
                    });
                }
            }
            TraceKind::Assignment if r.data.get("event").and_then(Value::as_str) == Some("consensus") => {
                if let (Some(c), Some(o)) = (field::<f64>(&r.data, "cost"), field::<f64>(&r.data, "optimal")) {
                    consensus.push((c, o));
                }
            }
            TraceKind::MpcResidual => {
                if let Some(res) = field::<f64>(&r.data, "residual") {
                    a.coupling_residual.push((r.t, res));
                }
                stage_cost += field::<f64>(&r.data, "stage_cost").unwrap_or(0.0);
            }
            _ => {}
        }
    }
    if let Some(t) = group_t {
        a.flush_group(&meta, t, &group);
    }

    let m = &mut a.summary.metrics;
    let end = a.summary.end_time;
    let last = |s: &[(f64, f64)]| s.last().map(|p| p.1);
    match meta.scenario.as_deref() {
        Some("containment") => {
            if let Some(v) = last(&a.hull_distance) {
                m.insert("hull_distance_final".into(), v);
                let tail = a.hull_distance.iter().filter(|p| p.0 >= end - 1.0 - 1e-9).map(|p| p.1);
                m.insert("hull_distance_last_second_max".into(), tail.fold(0.0, f64::max));
            }
        }
        Some("formation") => {
            if let (Some(first), Some(v)) = (a.formation_error.first(), last(&a.formation_error)) {
                m.insert("formation_error_initial".into(), first.1);
                m.insert("formation_error_final".into(), v);
            }
        }
        Some("rendezvous") => {
            if let Some(v) = last(&a.spread) {
                m.insert("spread_final".into(), v);
            }
        }
        Some("assignment") => {
            m.insert("gantt_rows".into(), a.gantt.len() as f64);
            if let Some(total) = meta.total_tasks {
                m.insert("finished".into(), if a.gantt.len() == total { 1.0 } else { 0.0 });
            }
            if let Some(mk) = a.gantt.iter().map(|g| g.end).reduce(f64::max) {
                m.insert("makespan".into(), mk);
            }
            m.insert("epochs_settled".into(), consensus.len() as f64);
            m.insert("total_cost".into(), consensus.iter().map(|c| c.0).sum());
            let gap = consensus.iter().map(|c| (c.0 - c.1).abs()).fold(0.0, f64::max);
            m.insert("optimality_gap".into(), gap);
        }
        Some("mpc") => {
            if let Some(r) = a.coupling_residual.iter().map(|p| p.1).reduce(f64::max) {
                m.insert("max_coupling_residual".into(), r);
            }
            m.insert("closed_loop_cost".into(), stage_cost);
        }
        _ => {}
    }
    a.summary.scenario = meta.scenario;
    a.summary.n = meta.n;
    a.summary.seed = meta.seed;
    a.summary.records = records.len();
    a
}

pub fn summarize(trace: &Path) -> Result<Summary, TraceError> {
    Ok(analyze(&read_trace(trace)?).summary)
}

fn write_series(path: &Path, header: [&str; 2], rows: &[(f64, f64)]) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (t, v) in rows {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `hull_distance.csv`, `formation_error.csv`, `coupling_residual.csv`
/// and `gantt.csv` into `dir`. Tables that do not apply have a header only.
pub fn export_csv(trace: &Path, dir: &Path) -> Result<Vec<PathBuf>, TraceError> {
    let a = analyze(&read_trace(trace)?);
    std::fs::create_dir_all(dir)?;
    let files = [
        ("hull_distance.csv", ["t", "max_follower_distance"], &a.hull_distance),
        ("formation_error.csv", ["t", "error"], &a.formation_error),
        ("coupling_residual.csv", ["t", "residual"], &a.coupling_residual),
    ];
    let mut out = Vec::new();
    for (name, header, rows) in files {
        let p = dir.join(name);
        write_series(&p, header, rows)?;
        out.push(p);
    }
    let p = dir.join("gantt.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["task_id", "reveal", "start", "end", "robot"])?;
    for g in &a.gantt {
        w.write_record([
            g.task_id.to_string(),
            g.reveal.to_string(),
            g.start.to_string(),
            g.end.to_string(),
            g.robot.to_string(),
        ])?;
    }
    w.flush()?;
    out.push(p);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_trace_gives_empty_tables() {
        let dir = tempfile::tempdir().unwrap();
        let trace = dir.path().join("trace.jsonl");
        File::create(&trace).unwrap();
        let s = summarize(&trace).unwrap();
        assert_eq!(s.records, 0);
        assert!(s.metrics.is_empty());
        let files = export_csv(&trace, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        for f in files {
            let text = std::fs::read_to_string(f).unwrap();
            assert_eq!(text.lines().count(), 1);
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let trace = dir.path().join("trace.jsonl");
        std::fs::write(&trace, "{\"v\":2,\"t\":0,\"agent\":null,\"kind\":\"meta\",\"data\":{}}\n").unwrap();
        assert!(matches!(summarize(&trace), Err(TraceError::Version { line: 1, found: 2 })));
    }

    #[test]
    fn backwards_time_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let mut sink = TraceSink::create(&path).unwrap();
        sink.emit(1.0, Some(0), TraceKind::Pose, &json!({"pos": [0.0, 0.0]})).unwrap();
        sink.emit(0.5, Some(0), TraceKind::Pose, &json!({"pos": [0.0, 0.0]})).unwrap();
        sink.finish().unwrap();
        assert!(matches!(read_trace(&path), Err(TraceError::Order { line: 2, .. })));
    }

    #[test]
    fn hull_series_from_poses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let mut sink = TraceSink::create(&path).unwrap();
        sink.emit(0.0, None, TraceKind::Meta, &json!({"scenario": "containment", "n": 4, "leaders": [0, 1, 2]})).unwrap();
        for (t, fx) in [(0.0, 3.0), (1.0, 0.2)] {
            for (i, p) in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [fx, 0.2]].iter().enumerate() {
                sink.emit(t, Some(i), TraceKind::Pose, &json!({ "pos": p })).unwrap();
            }
        }
        sink.finish().unwrap();
        let a = analyze(&read_trace(&path).unwrap());
        assert_eq!(a.hull_distance.len(), 2);
        assert!((a.hull_distance[0].1 - 4.04f64.sqrt()).abs() < 1e-12);
        assert_eq!(a.hull_distance[1].1, 0.0);
        assert_eq!(a.summary.metrics["hull_distance_final"], 0.0);
    }
}
