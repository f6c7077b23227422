//! Deterministic discrete-event scheduling of task graphs onto GPU groups.
//!
//! GPUs are numbered globally in group order: the first group owns GPUs
//! `0..n0`, the second `n0..n0+n1` and so on. Time is integer milliseconds
//! and tasks are never preempted.

mod engine;
mod metrics;
mod oracle;
pub mod trace;
mod validate;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::graph::{GraphViolation, TaskId};
use crate::resources::GpuGroup;

pub use engine::{simulate, simulate_with, SimOptions};
pub use metrics::{metrics, GroupMetrics, TraceMetrics};
pub use oracle::{optimal_schedule_bruteforce, ORACLE_TASK_LIMIT};
pub use validate::{validate_schedule, ScheduleViolation};

/// A group of identical GPUs as seen by the scheduler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimGroup {
    pub name: String,
    pub gpu_count: u32,
    pub hbm_bytes: u64,
    /// Memory held on every GPU of the group for the whole run.
    pub resident_bytes: u64,
}

impl SimGroup {
    pub fn new(name: &str, gpu_count: u32) -> Self {
        Self {
            name: name.to_string(),
            gpu_count,
            hbm_bytes: u64::MAX,
            resident_bytes: 0,
        }
    }

    pub fn with_memory(mut self, hbm_bytes: u64, resident_bytes: u64) -> Self {
        self.hbm_bytes = hbm_bytes;
        self.resident_bytes = resident_bytes;
        self
    }
}

impl From<&GpuGroup> for SimGroup {
    fn from(g: &GpuGroup) -> Self {
        SimGroup::new(g.role.name(), g.gpu_count).with_memory(g.hbm_bytes, 0)
    }
}

/// Global GPU id range of every group.
pub fn gpu_ranges(groups: &[SimGroup]) -> Vec<Range<u32>> {
    let mut next = 0;
    groups
        .iter()
        .map(|g| {
            let r = next..next + g.gpu_count;
            next = r.end;
            r
        })
        .collect()
}

pub fn group_index(groups: &[SimGroup], name: &str) -> Option<usize> {
    groups.iter().position(|g| g.name == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// Work-conserving list scheduling: start every ready task whose GPUs are free.
    GreedyEarliestStart,
    /// Greedy plus the forward look-ahead gate that reproduces the slotted
    /// stable phase of the generator-step pipeline.
    Slotted,
    /// One task at a time across the whole cluster.
    StrictSequentialBaseline,
}

/// Dispatch policy. Ready tasks are always considered in the order
/// (micro-batch or segment index, backward before forward, task id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    /// `Some(k)`: `GenFwd` of micro-batch `j` may start only once
    /// `CriticTeacher` of micro-batch `j - k` has started.
    pub lookahead_limit: Option<u32>,
}

impl Policy {
    pub fn greedy() -> Self {
        Self {
            kind: PolicyKind::GreedyEarliestStart,
            lookahead_limit: None,
        }
    }

    pub fn slotted() -> Self {
        Self {
            kind: PolicyKind::Slotted,
            lookahead_limit: Some(1),
        }
    }

    pub fn baseline() -> Self {
        Self {
            kind: PolicyKind::StrictSequentialBaseline,
            lookahead_limit: None,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "greedy" => Some(Self::greedy()),
            "slotted" => Some(Self::slotted()),
            "baseline" => Some(Self::baseline()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PolicyKind::GreedyEarliestStart => "greedy",
            PolicyKind::Slotted => "slotted",
            PolicyKind::StrictSequentialBaseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub task: TaskId,
    pub gpus: Vec<u32>,
    pub start_ms: i64,
    pub end_ms: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
    pub horizon_ms: i64,
}

impl Schedule {
    pub fn from_entries(mut entries: Vec<ScheduleEntry>) -> Self {
        entries.sort_by_key(|e| (e.start_ms, e.task));
        let horizon_ms = entries.iter().map(|e| e.end_ms).max().unwrap_or(0);
        Self { entries, horizon_ms }
    }

    pub fn makespan_ms(&self) -> i64 {
        self.horizon_ms
    }

    pub fn entry(&self, task: TaskId) -> Option<&ScheduleEntry> {
        self.entries.iter().find(|e| e.task == task)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedError {
    #[error("invalid task graph: {}", join(.0))]
    InvalidGraph(Vec<GraphViolation>),
    #[error("task {task} targets unknown group {group:?}")]
    UnknownGroup { task: TaskId, group: String },
    #[error("task {task} needs {required} GPUs but its group has {available}")]
    PlacementError { task: TaskId, required: u32, available: u32 },
    #[error("GPU {gpu} exceeds its memory capacity at t={time_ms} ms")]
    MemoryExceeded { gpu: u32, time_ms: i64 },
    #[error("brute-force oracle accepts at most {limit} tasks, graph has {tasks}")]
    OracleSizeExceeded { tasks: usize, limit: usize },
}

fn join(v: &[GraphViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
