//! Shared generators and independent reference implementations.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use worldpipe::guidance::{CameraCommand, KeyState, MoveCommand, MoveKey, ViewCommand, ViewKey};
use worldpipe::graph::{GpuDemand, Task, TaskGraph, TaskId, TaskKind};
use worldpipe::sched::SimGroup;

const GPU_KINDS: [TaskKind; 8] = [
    TaskKind::MicroPlan,
    TaskKind::PopulateA,
    TaskKind::GenFwd,
    TaskKind::GenBwd,
    TaskKind::CriticTeacher,
    TaskKind::Rollout,
    TaskKind::VaeChunk,
    TaskKind::SrChunk,
];

pub struct GraphShape {
    pub max_tasks: usize,
    pub min_duration: i64,
    pub max_duration: i64,
    pub with_memory: bool,
    pub allow_host: bool,
}

/// Random DAG over 1..=3 groups. Dependencies only point to earlier tasks;
/// ids are shuffled so positions and ids differ. When memory is enabled each
/// task fits on an otherwise idle GPU.
pub fn random_graph(seed: u64, shape: &GraphShape) -> (TaskGraph, Vec<SimGroup>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let n_groups = rng.gen_range(1..=3);
    let groups: Vec<SimGroup> = (0..n_groups)
        .map(|g| {
            let sg = SimGroup::new(&format!("g{g}"), rng.gen_range(1..=4));
            if shape.with_memory {
                sg.with_memory(1000, rng.gen_range(0..=200))
            } else {
                sg
            }
        })
        .collect();
    let n = rng.gen_range(1..=shape.max_tasks);
    let mut ids: Vec<u32> = (0..n as u32).map(|i| i * 3 + 1).collect();
    for i in (1..n).rev() {
        ids.swap(i, rng.gen_range(0..=i));
    }
    let density = rng.gen_range(0.0..0.5);
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let host = shape.allow_host && rng.gen_bool(0.1);
        let kind = if host {
            TaskKind::Display
        } else {
            GPU_KINDS[rng.gen_range(0..GPU_KINDS.len())]
        };
        let mut t = Task::new(TaskId(ids[i]), kind).with_duration(rng.gen_range(shape.min_duration..=shape.max_duration));
        if !host {
            let g = &groups[rng.gen_range(0..groups.len())];
            let demand = if rng.gen_bool(0.2) {
                GpuDemand::WholeGroup
            } else {
                GpuDemand::Count(rng.gen_range(1..=g.gpu_count))
            };
            t = t.on(&g.name, demand);
            if shape.with_memory {
                t.mem_delta_bytes = rng.gen_range(0..=(g.hbm_bytes - g.resident_bytes) as i64);
            }
        }
        if rng.gen_bool(0.3) {
            t = t.with_micro_batch(rng.gen_range(1..=4));
        }
        for j in 0..i {
            if rng.gen_bool(density) {
                t.add_dep(TaskId(ids[j]));
            }
        }
        tasks.push(t);
    }
    (TaskGraph::new(tasks), groups)
}

/// Longest duration-weighted path, by memoized recursion over dependencies.
pub fn longest_path(graph: &TaskGraph) -> i64 {
    fn finish(id: TaskId, by_id: &BTreeMap<TaskId, &Task>, memo: &mut BTreeMap<TaskId, i64>) -> i64 {
        if let Some(&v) = memo.get(&id) {
            return v;
        }
        let t = by_id[&id];
        let start = t.deps.iter().map(|&d| finish(d, by_id, memo)).max().unwrap_or(0);
        memo.insert(id, start + t.duration_ms);
        start + t.duration_ms
    }
    let by_id: BTreeMap<TaskId, &Task> = graph.tasks.iter().map(|t| (t.id, t)).collect();
    let mut memo = BTreeMap::new();
    graph.tasks.iter().map(|t| finish(t.id, &by_id, &mut memo)).max().unwrap_or(0)
}

fn demand_of(t: &Task, groups: &[SimGroup]) -> (Option<usize>, u32) {
    match &t.group {
        Some(name) => {
            let g = groups.iter().position(|g| &g.name == name).expect("known group");
            (Some(g), t.gpus.resolve(groups[g].gpu_count))
        }
        None => (None, 0),
    }
}

/// Exact makespan by the serial schedule-generation scheme over every
/// precedence-feasible permutation: each task in turn is placed at the
/// earliest time its dependencies are done and its group has enough free
/// GPUs for its whole duration. Active schedules contain an optimum.
pub fn exhaustive_makespan(graph: &TaskGraph, groups: &[SimGroup]) -> i64 {
    let n = graph.tasks.len();
    let pos: BTreeMap<TaskId, usize> = graph.tasks.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
    let deps: Vec<Vec<usize>> = graph.tasks.iter().map(|t| t.deps.iter().map(|d| pos[d]).collect()).collect();
    let need: Vec<(Option<usize>, u32)> = graph.tasks.iter().map(|t| demand_of(t, groups)).collect();

    struct State<'a> {
        graph: &'a TaskGraph,
        groups: &'a [SimGroup],
        deps: Vec<Vec<usize>>,
        need: Vec<(Option<usize>, u32)>,
        placed: Vec<Option<(i64, i64)>>,
        best: i64,
    }

    fn fits(s: &State, g: usize, k: u32, start: i64, end: i64, exclude: usize) -> bool {
        let mut points: Vec<i64> = vec![start];
        for (j, p) in s.placed.iter().enumerate() {
            if let Some((a, _)) = p {
                if j != exclude && *a > start && *a < end {
                    points.push(*a);
                }
            }
        }
        points.iter().all(|&t| {
            let used: u32 = s
                .placed
                .iter()
                .enumerate()
                .filter(|(j, p)| {
                    s.need[*j].0 == Some(g) && p.is_some_and(|(a, b)| a <= t && t < b && a < b)
                })
                .map(|(j, _)| s.need[j].1)
                .sum();
            used + k <= s.groups[g].gpu_count
        })
    }

    fn go(s: &mut State, count: usize) {
        let n = s.graph.tasks.len();
        if count == n {
            let ms = s.placed.iter().map(|p| p.unwrap().1).max().unwrap_or(0);
            s.best = s.best.min(ms);
            return;
        }
        for i in 0..n {
            if s.placed[i].is_some() || s.deps[i].iter().any(|&d| s.placed[d].is_none()) {
                continue;
            }
            let dur = s.graph.tasks[i].duration_ms;
            let ready = s.deps[i].iter().map(|&d| s.placed[d].unwrap().1).max().unwrap_or(0);
            let mut start = ready;
            if let (Some(g), k) = s.need[i] {
                if dur > 0 {
                    let mut candidates: Vec<i64> = s
                        .placed
                        .iter()
                        .flatten()
                        .map(|&(_, b)| b)
                        .filter(|&b| b > ready)
                        .collect();
                    candidates.push(ready);
                    candidates.sort_unstable();
                    start = candidates
                        .into_iter()
                        .find(|&t| fits(s, g, k, t, t + dur, i))
                        .expect("an idle instant exists after every placed task");
                }
            }
            s.placed[i] = Some((start, start + dur));
            go(s, count + 1);
            s.placed[i] = None;
        }
    }

    let mut s = State {
        graph,
        groups,
        deps,
        need,
        placed: vec![None; n],
        best: i64::MAX,
    };
    go(&mut s, 0);
    if n == 0 {
        0
    } else {
        s.best
    }
}

/// Key letters left after dropping opposing pairs, sorted.
fn surviving(pressed: &[char], pairs: [(char, char); 2]) -> String {
    let mut keep: BTreeSet<char> = pressed.iter().copied().collect();
    for (a, b) in pairs {
        if keep.contains(&a) && keep.contains(&b) {
            keep.remove(&a);
            keep.remove(&b);
        }
    }
    keep.into_iter().collect()
}

/// The published movement and view tables keyed by surviving keys
/// (`U`, `D`, `L`, `R` stand for the arrows), plus the tilt-up/turn-left cell.
pub fn reference_command(keys: &KeyState) -> CameraCommand {
    let moves: BTreeMap<&str, MoveCommand> = [
        ("W", MoveCommand::Forward),
        ("A", MoveCommand::Left),
        ("S", MoveCommand::Backward),
        ("D", MoveCommand::Right),
        ("AW", MoveCommand::ForwardLeft),
        ("DW", MoveCommand::ForwardRight),
        ("DS", MoveCommand::BackwardRight),
        ("AS", MoveCommand::BackwardLeft),
        ("", MoveCommand::Still),
    ]
    .into();
    let views: BTreeMap<&str, ViewCommand> = [
        ("R", ViewCommand::TurnRight),
        ("L", ViewCommand::TurnLeft),
        ("U", ViewCommand::TiltUp),
        ("D", ViewCommand::TiltDown),
        ("RU", ViewCommand::TiltUpTurnRight),
        ("DR", ViewCommand::TiltDownTurnRight),
        ("DL", ViewCommand::TiltDownTurnLeft),
        ("LU", ViewCommand::TiltUpTurnLeft),
        ("", ViewCommand::Still),
    ]
    .into();
    let m: Vec<char> = keys
        .movement
        .iter()
        .map(|k| match k {
            MoveKey::W => 'W',
            MoveKey::A => 'A',
            MoveKey::S => 'S',
            MoveKey::D => 'D',
        })
        .collect();
    let v: Vec<char> = keys
        .view
        .iter()
        .map(|k| match k {
            ViewKey::Up => 'U',
            ViewKey::Down => 'D',
            ViewKey::Left => 'L',
            ViewKey::Right => 'R',
        })
        .collect();
    if m.is_empty() && v.is_empty() {
        return CameraCommand::STANDBY;
    }
    CameraCommand {
        move_cmd: moves[surviving(&m, [('W', 'S'), ('A', 'D')]).as_str()],
        view: views[surviving(&v, [('U', 'D'), ('L', 'R')]).as_str()],
        standby: false,
    }
}
