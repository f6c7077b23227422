use std::collections::{BTreeMap, BTreeSet};

use super::{gpu_ranges, group_index, Schedule, SimGroup};
use crate::graph::{TaskGraph, TaskId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleViolation {
    #[error("task {task} starts at {start_ms} before dependency {dep} ends at {dep_end_ms}")]
    DependencyViolated {
        task: TaskId,
        dep: TaskId,
        start_ms: i64,
        dep_end_ms: i64,
    },
    #[error("tasks {a} and {b} overlap on GPU {gpu}")]
    GpuOverlap { gpu: u32, a: TaskId, b: TaskId },
    #[error("task {task} runs on GPU {gpu} outside its group")]
    WrongGroup { task: TaskId, gpu: u32 },
    #[error("task {task} holds {actual} GPUs, expected {expected}")]
    WrongGpuCount { task: TaskId, expected: u32, actual: u32 },
    #[error("task {task} lists GPU {gpu} more than once")]
    RepeatedGpu { task: TaskId, gpu: u32 },
    #[error("task {task} is missing from the schedule")]
    MissingTask { task: TaskId },
    #[error("task {task} is scheduled more than once")]
    DuplicateTask { task: TaskId },
    #[error("schedule references unknown task {task}")]
    UnknownTask { task: TaskId },
    #[error("task {task} targets unknown group {group:?}")]
    UnknownGroup { task: TaskId, group: String },
    #[error("task {task} lasts {actual} ms, expected {expected} ms")]
    DurationMismatch { task: TaskId, expected: i64, actual: i64 },
    #[error("task {task} has an invalid interval [{start_ms}, {end_ms})")]
    InvalidInterval { task: TaskId, start_ms: i64, end_ms: i64 },
    #[error("GPU {gpu} holds {held_bytes} bytes at t={time_ms} ms, capacity {capacity_bytes}")]
    MemoryExceeded {
        gpu: u32,
        time_ms: i64,
        held_bytes: i64,
        capacity_bytes: u64,
    },
}

/// Checks a schedule against its graph and cluster and returns every
/// violation found.
pub fn validate_schedule(
    schedule: &Schedule,
    graph: &TaskGraph,
    groups: &[SimGroup],
) -> Result<(), Vec<ScheduleViolation>> {
    let mut out = Vec::new();
    let ranges = gpu_ranges(groups);
    let total_gpus = ranges.last().map_or(0, |r| r.end);
    let tasks: BTreeMap<TaskId, usize> = graph.index();

    let mut placed: BTreeMap<TaskId, usize> = BTreeMap::new();
    for (k, e) in schedule.entries.iter().enumerate() {
        let Some(&ti) = tasks.get(&e.task) else {
            out.push(ScheduleViolation::UnknownTask { task: e.task });
            continue;
        };
        if placed.insert(e.task, k).is_some() {
            out.push(ScheduleViolation::DuplicateTask { task: e.task });
            continue;
        }
        let t = &graph.tasks[ti];
        if e.start_ms < 0 || e.end_ms < e.start_ms {
            out.push(ScheduleViolation::InvalidInterval {
                task: e.task,
                start_ms: e.start_ms,
                end_ms: e.end_ms,
            });
        } else if e.end_ms - e.start_ms != t.duration_ms {
            out.push(ScheduleViolation::DurationMismatch {
                task: e.task,
                expected: t.duration_ms,
                actual: e.end_ms - e.start_ms,
            });
        }

        let group = match &t.group {
            Some(name) => match group_index(groups, name) {
                Some(g) => Some(g),
                None => {
                    out.push(ScheduleViolation::UnknownGroup {
                        task: e.task,
                        group: name.clone(),
                    });
                    continue;
                }
            },
            None => None,
        };
        let size = group.map_or(0, |g| groups[g].gpu_count);
        let expected = t.gpus.resolve(size);
        if e.gpus.len() as u32 != expected {
            out.push(ScheduleViolation::WrongGpuCount {
                task: e.task,
                expected,
                actual: e.gpus.len() as u32,
            });
        }
        let mut seen = BTreeSet::new();
        for &gpu in &e.gpus {
            if !seen.insert(gpu) {
                out.push(ScheduleViolation::RepeatedGpu { task: e.task, gpu });
            }
            let inside = group.is_some_and(|g| ranges[g].contains(&gpu));
            if !inside || gpu >= total_gpus {
                out.push(ScheduleViolation::WrongGroup { task: e.task, gpu });
            }
        }
    }

    for t in &graph.tasks {
        let Some(&k) = placed.get(&t.id) else {
            out.push(ScheduleViolation::MissingTask { task: t.id });
            continue;
        };
        let e = &schedule.entries[k];
        for d in &t.deps {
            if let Some(&dk) = placed.get(d) {
                let de = &schedule.entries[dk];
                if e.start_ms < de.end_ms {
                    out.push(ScheduleViolation::DependencyViolated {
                        task: t.id,
                        dep: *d,
                        start_ms: e.start_ms,
                        dep_end_ms: de.end_ms,
                    });
                }
            }
        }
    }

    // Exclusivity and memory, per GPU.
    let mut per_gpu: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (k, e) in schedule.entries.iter().enumerate() {
        if e.end_ms > e.start_ms {
            for &gpu in &e.gpus {
                per_gpu.entry(gpu).or_default().push(k);
            }
        }
    }
    for (&gpu, ks) in &per_gpu {
        let mut ks = ks.clone();
        ks.sort_by_key(|&k| (schedule.entries[k].start_ms, schedule.entries[k].end_ms));
        let mut last: Option<usize> = None;
        for &k in &ks {
            let e = &schedule.entries[k];
            if let Some(l) = last {
                let le = &schedule.entries[l];
                if e.start_ms < le.end_ms {
                    out.push(ScheduleViolation::GpuOverlap { gpu, a: le.task, b: e.task });
                }
                if e.end_ms > le.end_ms {
                    last = Some(k);
                }
            } else {
                last = Some(k);
            }
        }

        let Some(g) = ranges.iter().position(|r| r.contains(&gpu)) else {
            continue;
        };
        let capacity = groups[g].hbm_bytes;
        let base = i64::try_from(groups[g].resident_bytes).unwrap_or(i64::MAX);
        // Releases sort before acquisitions at the same instant.
        let mut events: Vec<(i64, u8, i64)> = Vec::new();
        for &k in &ks {
            let e = &schedule.entries[k];
            let Some(&ti) = tasks.get(&e.task) else { continue };
            let delta = graph.tasks[ti].mem_delta_bytes;
            events.push((e.start_ms, 1, delta));
            events.push((e.end_ms, 0, -delta));
        }
        events.sort();
        let mut held = base;
        let mut reported = false;
        if held > 0 && held as u64 > capacity {
            out.push(ScheduleViolation::MemoryExceeded {
                gpu,
                time_ms: 0,
                held_bytes: held,
                capacity_bytes: capacity,
            });
            reported = true;
        }
        for (time_ms, _, delta) in events {
            held = held.saturating_add(delta);
            if !reported && held > 0 && held as u64 > capacity {
                out.push(ScheduleViolation::MemoryExceeded {
                    gpu,
                    time_ms,
                    held_bytes: held,
                    capacity_bytes: capacity,
                });
                reported = true;
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
