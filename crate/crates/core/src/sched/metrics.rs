use serde::Serialize;

use super::{gpu_ranges, Schedule, SimGroup};
use crate::graph::{TaskGraph, TaskKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMetrics {
    pub name: String,
    pub gpu_count: u32,
    /// GPU-milliseconds spent running tasks.
    pub busy_ms: i64,
    pub bubble_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceMetrics {
    pub makespan_ms: i64,
    pub per_group: Vec<GroupMetrics>,
    /// Peak held bytes per global GPU id, resident memory included.
    pub peak_memory_bytes: Vec<i64>,
    /// Frames per second over the display events, when there are at least two.
    pub throughput_fps: Option<f64>,
    pub feedback_latency_s: Option<f64>,
}

impl TraceMetrics {
    pub fn group(&self, name: &str) -> Option<&GroupMetrics> {
        self.per_group.iter().find(|g| g.name == name)
    }

    pub fn peak_memory_max(&self) -> i64 {
        self.peak_memory_bytes.iter().copied().max().unwrap_or(0)
    }
}

/// Busy time, bubble ratio and memory peaks over the full `[0, makespan]`
/// horizon. An empty horizon has bubble ratio 0.
pub fn metrics(schedule: &Schedule, graph: &TaskGraph, groups: &[SimGroup]) -> TraceMetrics {
    let makespan = schedule.makespan_ms();
    let ranges = gpu_ranges(groups);
    let total = ranges.last().map_or(0, |r| r.end) as usize;
    let index = graph.index();

    let mut busy_per_gpu = vec![0i64; total];
    let mut events: Vec<Vec<(i64, u8, i64)>> = vec![Vec::new(); total];
    for e in &schedule.entries {
        let delta = index.get(&e.task).map_or(0, |&i| graph.tasks[i].mem_delta_bytes);
        for &gpu in &e.gpus {
            let Some(slot) = busy_per_gpu.get_mut(gpu as usize) else { continue };
            *slot += e.end_ms - e.start_ms;
            if e.end_ms > e.start_ms {
                events[gpu as usize].push((e.start_ms, 1, delta));
                events[gpu as usize].push((e.end_ms, 0, -delta));
            }
        }
    }

    let per_group = groups
        .iter()
        .zip(&ranges)
        .map(|(g, r)| {
            let busy_ms: i64 = r.clone().map(|gpu| busy_per_gpu[gpu as usize]).sum();
            let capacity = i64::from(g.gpu_count) * makespan;
            let bubble_ratio = if capacity <= 0 {
                0.0
            } else {
                1.0 - busy_ms as f64 / capacity as f64
            };
            GroupMetrics {
                name: g.name.clone(),
                gpu_count: g.gpu_count,
                busy_ms,
                bubble_ratio,
            }
        })
        .collect();

    let mut peak_memory_bytes = vec![0i64; total];
    for (g, r) in groups.iter().zip(&ranges) {
        let base = i64::try_from(g.resident_bytes).unwrap_or(i64::MAX);
        for gpu in r.clone() {
            let ev = &mut events[gpu as usize];
            ev.sort();
            let mut held = base;
            let mut peak = base;
            for &(_, _, d) in ev.iter() {
                held = held.saturating_add(d);
                peak = peak.max(held);
            }
            peak_memory_bytes[gpu as usize] = peak;
        }
    }

    TraceMetrics {
        makespan_ms: makespan,
        per_group,
        peak_memory_bytes,
        throughput_fps: display_fps(schedule, graph),
        feedback_latency_s: None,
    }
}

/// `frames × (n − 1) / (last − first)` over display events in time order,
/// where frames is the mean frame count of the displayed chunks after the
/// first.
fn display_fps(schedule: &Schedule, graph: &TaskGraph) -> Option<f64> {
    let index = graph.index();
    let mut shows: Vec<(i64, usize)> = schedule
        .entries
        .iter()
        .filter_map(|e| {
            let t = &graph.tasks[*index.get(&e.task)?];
            (t.kind == TaskKind::Display).then(|| (e.end_ms, t.frames.len().max(1)))
        })
        .collect();
    shows.sort();
    if shows.len() < 2 {
        return None;
    }
    let span = shows.last()?.0 - shows[0].0;
    if span <= 0 {
        return None;
    }
    let frames: usize = shows[1..].iter().map(|s| s.1).sum();
    Some(frames as f64 * 1000.0 / span as f64)
}
