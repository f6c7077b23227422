//! Exact minimum-makespan search for tiny graphs.
//!
//! Some optimal schedule is active: every task starts at time 0 or at the
//! end of another task. The search therefore only starts tasks at event
//! times, and at each event it either starts one more fitting task or
//! advances to the next completion. Within one instant, starts are taken in
//! increasing task position so each set of simultaneous starts is visited
//! once. GPUs inside a group are interchangeable, so only free counts matter.
//! Memory is not modeled here.

use super::engine::Prepared;
use super::{simulate, Policy, SchedError, Schedule, ScheduleEntry, SimGroup};
use crate::graph::TaskGraph;

pub const ORACLE_TASK_LIMIT: usize = 12;

pub fn optimal_schedule_bruteforce(graph: &TaskGraph, groups: &[SimGroup]) -> Result<Schedule, SchedError> {
    if graph.tasks.len() > ORACLE_TASK_LIMIT {
        return Err(SchedError::OracleSizeExceeded {
            tasks: graph.tasks.len(),
            limit: ORACLE_TASK_LIMIT,
        });
    }
    let prep = Prepared::new(graph, groups)?;
    let n = graph.tasks.len();

    // Longest path from a task's start to the end of the graph.
    let order = graph.topological_order().expect("validated graph is acyclic");
    let mut tail = vec![0i64; n];
    for &i in order.iter().rev() {
        let after = prep.children[i].iter().map(|&c| tail[c]).max().unwrap_or(0);
        tail[i] = prep.durations[i] + after;
    }

    let incumbent = simulate(graph, groups, Policy::greedy())?;
    let mut search = Search {
        prep: &prep,
        tail,
        best_ms: incumbent.makespan_ms(),
        best: None,
        group_sizes: groups.iter().map(|g| g.gpu_count).collect(),
    };
    let state = State {
        now: 0,
        start: vec![None; n],
        done: vec![false; n],
        free: search.group_sizes.clone(),
        min_next: 0,
    };
    search.dfs(state);

    let Some(starts) = search.best else {
        return Ok(incumbent);
    };
    Ok(assign_gpus(graph, &prep, &starts))
}

#[derive(Clone)]
struct State {
    now: i64,
    start: Vec<Option<i64>>,
    done: Vec<bool>,
    free: Vec<u32>,
    /// Smallest task position that may still start at `now`.
    min_next: usize,
}

struct Search<'a> {
    prep: &'a Prepared,
    tail: Vec<i64>,
    best_ms: i64,
    best: Option<Vec<i64>>,
    group_sizes: Vec<u32>,
}

impl Search<'_> {
    fn end(&self, s: &State, i: usize) -> Option<i64> {
        s.start[i].map(|t| t + self.prep.durations[i])
    }

    fn lower_bound(&self, s: &State) -> i64 {
        let n = s.start.len();
        let mut lb = s.now;
        let mut load = vec![0i64; self.group_sizes.len()];
        for i in 0..n {
            match s.start[i] {
                Some(t) => {
                    let end = t + self.prep.durations[i];
                    lb = lb.max(end);
                    if !s.done[i] {
                        for &c in &self.prep.children[i] {
                            lb = lb.max(end + self.tail[c]);
                        }
                        if let Some(g) = self.prep.group[i] {
                            load[g] += (end - s.now) * i64::from(self.prep.need[i]);
                        }
                    }
                }
                None => {
                    lb = lb.max(s.now + self.tail[i]);
                    if let Some(g) = self.prep.group[i] {
                        load[g] += self.prep.durations[i] * i64::from(self.prep.need[i]);
                    }
                }
            }
        }
        for (g, &w) in load.iter().enumerate() {
            let size = i64::from(self.group_sizes[g]);
            if size > 0 && w > 0 {
                lb = lb.max(s.now + (w + size - 1) / size);
            }
        }
        lb
    }

    fn dfs(&mut self, s: State) {
        let n = s.start.len();
        if s.start.iter().all(Option::is_some) {
            let makespan = (0..n).filter_map(|i| self.end(&s, i)).max().unwrap_or(0);
            if makespan < self.best_ms {
                self.best_ms = makespan;
                self.best = Some(s.start.iter().map(|t| t.unwrap_or(0)).collect());
            }
            return;
        }
        // Only strictly better schedules than the greedy incumbent matter.
        if self.lower_bound(&s) >= self.best_ms {
            return;
        }

        for i in s.min_next..n {
            if s.start[i].is_some() || !self.prep.deps[i].iter().all(|&d| s.done[d]) {
                continue;
            }
            let g = self.prep.group[i];
            if let Some(g) = g {
                if s.free[g] < self.prep.need[i] {
                    continue;
                }
            }
            let mut next = s.clone();
            next.start[i] = Some(s.now);
            if let Some(g) = g {
                next.free[g] -= self.prep.need[i];
            }
            next.min_next = i + 1;
            self.dfs(next);
        }

        // Advance to the next completion.
        let next_end = (0..n)
            .filter(|&i| !s.done[i])
            .filter_map(|i| self.end(&s, i))
            .min();
        if let Some(t) = next_end {
            let mut next = s;
            next.now = t;
            next.min_next = 0;
            for i in 0..n {
                if !next.done[i] && next.start[i].map(|st| st + self.prep.durations[i]) == Some(t) {
                    next.done[i] = true;
                    if let Some(g) = self.prep.group[i] {
                        next.free[g] += self.prep.need[i];
                    }
                }
            }
            self.dfs(next);
        }
    }
}

fn assign_gpus(graph: &TaskGraph, prep: &Prepared, starts: &[i64]) -> Schedule {
    let n = starts.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (starts[i], i));
    let total = prep.ranges.last().map_or(0, |r| r.end) as usize;
    let mut busy_until = vec![i64::MIN; total];
    let mut entries = Vec::with_capacity(n);
    for i in order {
        let start = starts[i];
        let end = start + prep.durations[i];
        let gpus: Vec<u32> = match prep.group[i] {
            None => Vec::new(),
            Some(g) => prep.ranges[g]
                .clone()
                .filter(|&gpu| busy_until[gpu as usize] <= start)
                .take(prep.need[i] as usize)
                .collect(),
        };
        if end > start {
            for &gpu in &gpus {
                busy_until[gpu as usize] = end;
            }
        }
        entries.push(ScheduleEntry {
            task: graph.tasks[i].id,
            gpus,
            start_ms: start,
            end_ms: end,
        });
    }
    Schedule::from_entries(entries)
}
