use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use super::{gpu_ranges, group_index, Policy, PolicyKind, SchedError, Schedule, ScheduleEntry, SimGroup};
use crate::graph::{validate_graph, TaskGraph, TaskId, TaskKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Fail with `MemoryExceeded` as soon as a GPU's held memory passes its
    /// capacity.
    pub enforce_memory: bool,
}

/// Dispatch order key: (micro-batch or segment, backward first, id).
pub(super) type PriorityKey = (u32, u8, TaskId);

/// Graph resolved against a concrete cluster.
pub(super) struct Prepared {
    pub durations: Vec<i64>,
    pub group: Vec<Option<usize>>,
    pub need: Vec<u32>,
    pub deps: Vec<Vec<usize>>,
    pub children: Vec<Vec<usize>>,
    pub priority: Vec<PriorityKey>,
    pub ranges: Vec<std::ops::Range<u32>>,
}

impl Prepared {
    pub fn new(graph: &TaskGraph, groups: &[SimGroup]) -> Result<Self, SchedError> {
        validate_graph(graph).map_err(SchedError::InvalidGraph)?;
        let index = graph.index();
        let n = graph.tasks.len();
        let mut prep = Prepared {
            durations: Vec::with_capacity(n),
            group: Vec::with_capacity(n),
            need: Vec::with_capacity(n),
            deps: vec![Vec::new(); n],
            children: vec![Vec::new(); n],
            priority: Vec::with_capacity(n),
            ranges: gpu_ranges(groups),
        };
        for (i, t) in graph.tasks.iter().enumerate() {
            let g = match &t.group {
                Some(name) => Some(group_index(groups, name).ok_or_else(|| SchedError::UnknownGroup {
                    task: t.id,
                    group: name.clone(),
                })?),
                None => None,
            };
            let size = g.map_or(0, |g| groups[g].gpu_count);
            let need = t.gpus.resolve(size);
            if need > size {
                return Err(SchedError::PlacementError {
                    task: t.id,
                    required: need,
                    available: size,
                });
            }
            prep.durations.push(t.duration_ms);
            prep.group.push(if need == 0 { None } else { g });
            prep.need.push(need);
            prep.priority.push(priority_key(t));
            for d in &t.deps {
                let j = index[d];
                prep.deps[i].push(j);
                prep.children[j].push(i);
            }
        }
        Ok(prep)
    }
}

pub(super) fn priority_key(t: &crate::graph::Task) -> PriorityKey {
    (
        t.micro_batch.or(t.segment).unwrap_or(0),
        u8::from(!t.kind.is_backward()),
        t.id,
    )
}

pub fn simulate(graph: &TaskGraph, groups: &[SimGroup], policy: Policy) -> Result<Schedule, SchedError> {
    simulate_with(graph, groups, policy, SimOptions::default())
}

/// Event-driven list scheduler. At every event time it first retires tasks
/// ending at that time, then walks ready tasks in priority order and starts
/// each one whose GPUs are free, repeating until nothing changes.
pub fn simulate_with(
    graph: &TaskGraph,
    groups: &[SimGroup],
    policy: Policy,
    options: SimOptions,
) -> Result<Schedule, SchedError> {
    let prep = Prepared::new(graph, groups)?;
    let n = graph.tasks.len();
    let total_gpus = prep.ranges.last().map_or(0, |r| r.end) as usize;

    let mut gpu_busy = vec![false; total_gpus];
    let mut mem = vec![0i64; total_gpus];
    let mut capacity = vec![u64::MAX; total_gpus];
    for (g, r) in groups.iter().zip(&prep.ranges) {
        for gpu in r.clone() {
            mem[gpu as usize] = i64::try_from(g.resident_bytes).unwrap_or(i64::MAX);
            capacity[gpu as usize] = g.hbm_bytes;
        }
    }

    // Look-ahead gate bookkeeping: micro-batch -> task position.
    let gate = policy.lookahead_limit.map(|k| {
        let mut fwd = Vec::new();
        let mut ct = std::collections::BTreeMap::new();
        for (i, t) in graph.tasks.iter().enumerate() {
            match (t.kind, t.micro_batch) {
                (TaskKind::GenFwd, Some(mb)) => fwd.push((i, mb)),
                (TaskKind::CriticTeacher, Some(mb)) => {
                    ct.insert(mb, i);
                }
                _ => {}
            }
        }
        let mut blocker: Vec<Option<usize>> = vec![None; n];
        for (i, mb) in fwd {
            if mb > k {
                blocker[i] = ct.get(&(mb - k)).copied();
            }
        }
        blocker
    });

    let mut pending_deps: Vec<usize> = prep.deps.iter().map(Vec::len).collect();
    let mut started = vec![false; n];
    let mut ready: BTreeSet<(PriorityKey, usize)> = (0..n)
        .filter(|&i| pending_deps[i] == 0)
        .map(|i| (prep.priority[i], i))
        .collect();
    let mut running: BinaryHeap<Reverse<(i64, usize)>> = BinaryHeap::new();
    let mut assigned: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut entries = Vec::with_capacity(n);
    let mut done = 0usize;
    let mut now = 0i64;

    loop {
        loop {
            let mut changed = false;
            while let Some(&Reverse((end, i))) = running.peek() {
                if end > now {
                    break;
                }
                running.pop();
                for &gpu in &assigned[i] {
                    gpu_busy[gpu as usize] = false;
                    mem[gpu as usize] -= graph.tasks[i].mem_delta_bytes;
                }
                done += 1;
                for &c in &prep.children[i] {
                    pending_deps[c] -= 1;
                    if pending_deps[c] == 0 {
                        ready.insert((prep.priority[c], c));
                    }
                }
                changed = true;
            }

            let candidates: Vec<(PriorityKey, usize)> = ready.iter().copied().collect();
            for (key, i) in candidates {
                if policy.kind == PolicyKind::StrictSequentialBaseline && !running.is_empty() {
                    break;
                }
                if let Some(blocker) = gate.as_ref().and_then(|b| b[i]) {
                    if !started[blocker] {
                        continue;
                    }
                }
                let gpus = match prep.group[i] {
                    None => Vec::new(),
                    Some(g) => {
                        let free: Vec<u32> = prep.ranges[g]
                            .clone()
                            .filter(|&gpu| !gpu_busy[gpu as usize])
                            .take(prep.need[i] as usize)
                            .collect();
                        if free.len() < prep.need[i] as usize {
                            continue;
                        }
                        free
                    }
                };
                ready.remove(&(key, i));
                started[i] = true;
                for &gpu in &gpus {
                    gpu_busy[gpu as usize] = true;
                    mem[gpu as usize] += graph.tasks[i].mem_delta_bytes;
                    if options.enforce_memory && mem[gpu as usize] > 0 && mem[gpu as usize] as u64 > capacity[gpu as usize] {
                        return Err(super::SchedError::MemoryExceeded { gpu, time_ms: now });
                    }
                }
                let end = now + prep.durations[i];
                running.push(Reverse((end, i)));
                entries.push(ScheduleEntry {
                    task: graph.tasks[i].id,
                    gpus: gpus.clone(),
                    start_ms: now,
                    end_ms: end,
                });
                assigned[i] = gpus;
                changed = true;
            }
            if !changed {
                break;
            }
        }

        if done == n {
            break;
        }
        match running.peek() {
            Some(&Reverse((end, _))) => now = end,
            // Unreachable for a validated DAG: with nothing running, the
            // highest-priority ready task always fits its group.
            None => unreachable!("scheduler stalled with {} of {} tasks done", done, n),
        }
    }

    Ok(Schedule::from_entries(entries))
}
