//! Chrome trace-event export and re-ingest.
//!
//! The file is a JSON array with one event per line. Metadata events name
//! every process (GPU group) and thread (GPU), and a `worldpipe_group`
//! record carries the group sizes and memory so the cluster can be rebuilt.
//! Each schedule entry becomes one complete (`"X"`) event per GPU, with the
//! full task record in `args`. Host-side tasks live in one extra process
//! after the groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{gpu_ranges, Schedule, ScheduleEntry, SimGroup};
use crate::graph::{Task, TaskGraph, TaskId};

const GROUP_RECORD: &str = "worldpipe_group";
const US_PER_MS: i64 = 1000;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trace event {index}: {reason}")]
    Malformed { index: usize, reason: String },
}

#[derive(Serialize, Deserialize)]
struct Event {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cat: Option<String>,
    ph: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ts: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dur: Option<i64>,
    pid: u32,
    tid: u32,
    #[serde(default)]
    args: Value,
}

#[derive(Serialize, Deserialize)]
struct GroupRecord {
    name: String,
    gpu_count: u32,
    hbm_bytes: u64,
    resident_bytes: u64,
    first_gpu: u32,
}

fn meta(name: &str, pid: u32, tid: u32, args: Value) -> Event {
    Event {
        name: name.to_string(),
        cat: None,
        ph: "M".to_string(),
        ts: None,
        dur: None,
        pid,
        tid,
        args,
    }
}

/// Serializes a schedule. Output is byte-stable for identical inputs.
pub fn to_chrome_trace(schedule: &Schedule, graph: &TaskGraph, groups: &[SimGroup]) -> String {
    let ranges = gpu_ranges(groups);
    let host_pid = groups.len() as u32;
    let mut events = Vec::new();
    for (pid, (g, r)) in groups.iter().zip(&ranges).enumerate() {
        let pid = pid as u32;
        events.push(meta("process_name", pid, 0, serde_json::json!({ "name": g.name })));
        let record = GroupRecord {
            name: g.name.clone(),
            gpu_count: g.gpu_count,
            hbm_bytes: g.hbm_bytes,
            resident_bytes: g.resident_bytes,
            first_gpu: r.start,
        };
        events.push(meta(GROUP_RECORD, pid, 0, serde_json::to_value(record).expect("plain record")));
        for gpu in r.clone() {
            events.push(meta("thread_name", pid, gpu, serde_json::json!({ "name": format!("gpu{gpu}") })));
        }
    }
    events.push(meta("process_name", host_pid, 0, serde_json::json!({ "name": "host" })));

    let index = graph.index();
    for e in &schedule.entries {
        let Some(&ti) = index.get(&e.task) else { continue };
        let task = &graph.tasks[ti];
        let args = serde_json::to_value(task).expect("task serialization is infallible");
        let mut push = |pid: u32, tid: u32| {
            events.push(Event {
                name: task.label(),
                cat: Some(task.kind.name().to_string()),
                ph: "X".to_string(),
                ts: Some(e.start_ms * US_PER_MS),
                dur: Some((e.end_ms - e.start_ms) * US_PER_MS),
                pid,
                tid,
                args: args.clone(),
            });
        };
        if e.gpus.is_empty() {
            push(host_pid, 0);
        }
        for &gpu in &e.gpus {
            let pid = ranges.iter().position(|r| r.contains(&gpu)).map_or(host_pid, |p| p as u32);
            push(pid, gpu);
        }
    }

    let mut out = String::from("[\n");
    for (k, ev) in events.iter().enumerate() {
        out.push_str(&serde_json::to_string(ev).expect("event serialization is infallible"));
        out.push_str(if k + 1 < events.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    out
}

/// Rebuilds schedule, graph and cluster from a trace written by
/// [`to_chrome_trace`]. Per-GPU events of one task with equal timing merge
/// into one entry; any disagreement yields separate entries so validation
/// reports the task as duplicated.
pub fn from_chrome_trace(text: &str) -> Result<(Schedule, TaskGraph, Vec<SimGroup>), TraceError> {
    let events: Vec<Event> = serde_json::from_str(text)?;
    let mut groups: Vec<(u32, SimGroup)> = Vec::new();
    let mut tasks: BTreeMap<TaskId, Task> = BTreeMap::new();
    let mut entries: Vec<ScheduleEntry> = Vec::new();
    let mut host_pid: Option<u32> = None;

    for (index, ev) in events.iter().enumerate() {
        let bad = |reason: String| TraceError::Malformed { index, reason };
        match ev.ph.as_str() {
            "M" if ev.name == GROUP_RECORD => {
                let r: GroupRecord = serde_json::from_value(ev.args.clone()).map_err(|e| bad(e.to_string()))?;
                groups.push((
                    r.first_gpu,
                    SimGroup::new(&r.name, r.gpu_count).with_memory(r.hbm_bytes, r.resident_bytes),
                ));
            }
            "M" if ev.name == "process_name" && ev.args.get("name").and_then(Value::as_str) == Some("host") => {
                host_pid = Some(ev.pid);
            }
            "M" => {}
            "X" => {
                let task: Task = serde_json::from_value(ev.args.clone()).map_err(|e| bad(e.to_string()))?;
                let ts = ev.ts.ok_or_else(|| bad("missing ts".into()))?;
                let dur = ev.dur.ok_or_else(|| bad("missing dur".into()))?;
                if ts % US_PER_MS != 0 || dur % US_PER_MS != 0 {
                    return Err(bad("timestamps must be whole milliseconds".into()));
                }
                let (start_ms, end_ms) = (ts / US_PER_MS, (ts + dur) / US_PER_MS);
                let on_host = host_pid == Some(ev.pid);
                let id = task.id;
                if let Some(prev) = tasks.get(&id) {
                    if *prev != task {
                        return Err(bad(format!("task {id} has conflicting records")));
                    }
                } else {
                    tasks.insert(id, task);
                }
                let merged = entries
                    .iter_mut()
                    .rev()
                    .find(|e| e.task == id && e.start_ms == start_ms && e.end_ms == end_ms && !on_host && !e.gpus.is_empty());
                match merged {
                    Some(e) if !e.gpus.contains(&ev.tid) => e.gpus.push(ev.tid),
                    _ => entries.push(ScheduleEntry {
                        task: id,
                        gpus: if on_host { Vec::new() } else { vec![ev.tid] },
                        start_ms,
                        end_ms,
                    }),
                }
            }
            other => return Err(bad(format!("unsupported phase {other:?}"))),
        }
    }

    groups.sort_by_key(|g| g.0);
    let groups: Vec<SimGroup> = groups.into_iter().map(|g| g.1).collect();
    for e in &mut entries {
        e.gpus.sort_unstable();
    }
    Ok((
        Schedule::from_entries(entries),
        TaskGraph::new(tasks.into_values().collect()),
        groups,
    ))
}
