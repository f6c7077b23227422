//! Segment-level planning graphs.
//!
//! Each segment of `N` frames first predicts three anchor frames jointly from
//! its initial frame (the micro plan), then fills the two gaps between anchors
//! in two population stages. Segments are chained: the next segment's initial
//! frame is one of the current segment's anchors, so the autoregressive chain
//! runs over segments instead of frames.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{Task, TaskGraph, TaskId, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MmplError {
    #[error("frames_per_segment must be at least 4, got {0}")]
    InvalidSegmentLength(u32),
    #[error("anchors ({t_a}, {t_b}, {t_c}) must satisfy 1 < t_a < t_b < t_c <= {n}")]
    InvalidAnchors { t_a: u32, t_b: u32, t_c: u32, n: u32 },
    #[error("total_segments must be at least 1")]
    InvalidSegmentCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorRule {
    /// `(2, floor(N/2) + 1, N)`; gives `(2, 6, 10)` for ten-frame segments.
    ShiftedMidpoint,
    /// `(2, max(3, floor(N/2)), N)`.
    Midpoint,
    Custom { t_a: u32, t_b: u32, t_c: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainMode {
    /// Next segment starts from the terminal anchor `t_c`.
    TerminalChain,
    /// Next segment starts from the midpoint anchor `t_b`; frames after `t_b`
    /// of every non-final segment are superseded by the next segment.
    MinMemoryPeak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub t_a: u32,
    pub t_b: u32,
    pub t_c: u32,
}

impl AnchorSet {
    pub fn new(t_a: u32, t_b: u32, t_c: u32, n: u32) -> Result<Self, MmplError> {
        if 1 < t_a && t_a < t_b && t_b < t_c && t_c <= n {
            Ok(Self { t_a, t_b, t_c })
        } else {
            Err(MmplError::InvalidAnchors { t_a, t_b, t_c, n })
        }
    }

    pub fn as_array(&self) -> [u32; 3] {
        [self.t_a, self.t_b, self.t_c]
    }

    /// Local frames filled by the first population stage.
    pub fn populate_a_frames(&self) -> Vec<u32> {
        (self.t_a + 1..self.t_b).collect()
    }

    /// Local frames filled by the second population stage.
    pub fn populate_b_frames(&self) -> Vec<u32> {
        (self.t_b + 1..self.t_c).collect()
    }

    /// Local index inside a segment that becomes the next segment's frame 1.
    pub fn chain_frame(&self, mode: ChainMode) -> u32 {
        match mode {
            ChainMode::TerminalChain => self.t_c,
            ChainMode::MinMemoryPeak => self.t_b,
        }
    }
}

pub fn micro_anchors(n: u32, rule: AnchorRule) -> Result<AnchorSet, MmplError> {
    if n < 4 {
        return Err(MmplError::InvalidSegmentLength(n));
    }
    match rule {
        AnchorRule::ShiftedMidpoint => AnchorSet::new(2, n / 2 + 1, n, n),
        AnchorRule::Midpoint => AnchorSet::new(2, (n / 2).max(3), n, n),
        AnchorRule::Custom { t_a, t_b, t_c } => AnchorSet::new(t_a, t_b, t_c, n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub total_segments: u32,
    pub frames_per_segment: u32,
    pub anchor_rule: AnchorRule,
    pub chain_mode: ChainMode,
    pub include_loop_tasks: bool,
    /// When set, `MicroPlan(s+1)` also waits for `BoundaryReencode(s)`.
    pub plan_waits_for_reencode: bool,
    /// When set, `PopulateB(s)` waits for `PopulateA(s)` in addition to the
    /// micro plan.
    pub populate_b_waits_for_a: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            total_segments: 2,
            frames_per_segment: 10,
            anchor_rule: AnchorRule::ShiftedMidpoint,
            chain_mode: ChainMode::TerminalChain,
            include_loop_tasks: false,
            plan_waits_for_reencode: false,
            populate_b_waits_for_a: true,
        }
    }
}

impl GenerationConfig {
    pub fn anchors(&self) -> Result<AnchorSet, MmplError> {
        micro_anchors(self.frames_per_segment, self.anchor_rule)
    }

    pub fn validate(&self) -> Result<AnchorSet, MmplError> {
        if self.total_segments == 0 {
            return Err(MmplError::InvalidSegmentCount);
        }
        self.anchors()
    }
}

/// A frame identified by segment and local index, plus its position in the
/// de-duplicated output stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct FrameRef {
    pub segment: u32,
    pub local_index: u32,
    pub global_index: u32,
}

fn segment_offset(s: u32, anchors: &AnchorSet, mode: ChainMode) -> u32 {
    s * (anchors.chain_frame(mode) - 1)
}

pub fn frame_ref(s: u32, local_index: u32, anchors: &AnchorSet, mode: ChainMode) -> FrameRef {
    FrameRef {
        segment: s,
        local_index,
        global_index: segment_offset(s, anchors, mode) + local_index,
    }
}

/// Every unique output frame in display order, attributed to the segment
/// whose tasks produce it. Later segments win where segments overlap; the
/// very first frame is the conditioning input of segment 0.
pub fn output_frames(segments: u32, n: u32, anchors: &AnchorSet, mode: ChainMode) -> Vec<FrameRef> {
    let mut owner: BTreeMap<u32, FrameRef> = BTreeMap::new();
    for s in 0..segments {
        for l in 1..=n {
            let f = frame_ref(s, l, anchors, mode);
            if l >= 2 || !owner.contains_key(&f.global_index) {
                owner.insert(f.global_index, f);
            }
        }
    }
    owner.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameCount {
    /// Unique frames in the output video (`T`).
    pub unique: u32,
    /// Frames produced when every segment is fully generated.
    pub generated: u32,
    pub reuse_ratio: f64,
}

pub fn unique_frame_count(segments: u32, n: u32, anchors: &AnchorSet, mode: ChainMode) -> FrameCount {
    let generated = segments * (n - 1) + 1;
    let unique = match mode {
        ChainMode::TerminalChain => generated,
        ChainMode::MinMemoryPeak => n + segments.saturating_sub(1) * (n - anchors.t_b + 1),
    };
    FrameCount {
        unique,
        generated,
        reuse_ratio: 1.0 - f64::from(unique) / f64::from(generated),
    }
}

/// The four per-segment tasks with ids `first_id..first_id + 4` in the order
/// micro plan, boundary re-encode, first population, second population.
/// Durations are left at zero for the caller's cost model.
pub fn build_segment_tasks(s: u32, anchors: &AnchorSet, first_id: u32) -> Vec<Task> {
    build_segment_tasks_with(s, anchors, first_id, true)
}

fn build_segment_tasks_with(s: u32, anchors: &AnchorSet, first_id: u32, b_waits_for_a: bool) -> Vec<Task> {
    let plan = TaskId(first_id);
    let reencode = TaskId(first_id + 1);
    let pop_a = TaskId(first_id + 2);
    let pop_b = TaskId(first_id + 3);
    let mut b = Task::new(pop_b, TaskKind::PopulateB)
        .with_segment(s)
        .with_frames(anchors.populate_b_frames())
        .depends_on(plan);
    if b_waits_for_a {
        b.add_dep(pop_a);
    }
    vec![
        Task::new(plan, TaskKind::MicroPlan)
            .with_segment(s)
            .with_frames(anchors.as_array().to_vec()),
        Task::new(reencode, TaskKind::BoundaryReencode)
            .with_segment(s)
            .with_frames(vec![1, anchors.t_c])
            .depends_on(plan),
        Task::new(pop_a, TaskKind::PopulateA)
            .with_segment(s)
            .with_frames(anchors.populate_a_frames())
            .depends_on(plan),
        b,
    ]
}

/// Order in which kinds of one segment are numbered; the scheduler breaks
/// ties by id, so the planning chain is numbered ahead of population work.
fn kind_rank(kind: TaskKind) -> u8 {
    match kind {
        TaskKind::GuideRender => 0,
        TaskKind::MicroPlan => 1,
        TaskKind::Recon => 2,
        TaskKind::BoundaryReencode => 3,
        TaskKind::PopulateA => 4,
        TaskKind::PopulateB => 5,
        _ => 6,
    }
}

pub fn build_macro_chain(config: &GenerationConfig) -> Result<TaskGraph, MmplError> {
    let anchors = config.validate()?;
    let mut tasks = Vec::new();
    let mut next = 0u32;
    let mut plan_ids = Vec::new();
    for s in 0..config.total_segments {
        let seg = build_segment_tasks_with(s, &anchors, next, config.populate_b_waits_for_a);
        next += seg.len() as u32;
        plan_ids.push(seg[0].id);
        tasks.extend(seg);
    }
    let find = |tasks: &Vec<Task>, kind: TaskKind, s: u32| {
        tasks
            .iter()
            .position(|t| t.kind == kind && t.segment == Some(s))
            .expect("segment tasks were just built")
    };
    for s in 1..config.total_segments {
        let i = find(&tasks, TaskKind::MicroPlan, s);
        tasks[i].add_dep(plan_ids[s as usize - 1]);
        if config.plan_waits_for_reencode {
            let r = tasks[find(&tasks, TaskKind::BoundaryReencode, s - 1)].id;
            tasks[i].add_dep(r);
        }
    }
    if config.include_loop_tasks {
        for s in 0..config.total_segments {
            let recon = TaskId(next);
            next += 1;
            tasks.push(
                Task::new(recon, TaskKind::Recon)
                    .with_segment(s)
                    .with_frames(anchors.as_array().to_vec())
                    .depends_on(plan_ids[s as usize]),
            );
            if s + 1 < config.total_segments {
                let guide = TaskId(next);
                next += 1;
                tasks.push(Task::new(guide, TaskKind::GuideRender).with_segment(s + 1).depends_on(recon));
                let i = find(&tasks, TaskKind::MicroPlan, s + 1);
                tasks[i].add_dep(guide);
            }
        }
    }
    renumber(&mut tasks);
    Ok(TaskGraph {
        tasks,
        config: Some(*config),
    })
}

fn renumber(tasks: &mut [Task]) {
    tasks.sort_by_key(|t| (t.segment, kind_rank(t.kind), t.id));
    let map: BTreeMap<TaskId, TaskId> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id, TaskId(i as u32)))
        .collect();
    for t in tasks.iter_mut() {
        t.id = map[&t.id];
        let mut deps: Vec<TaskId> = t.deps.iter().map(|d| map[d]).collect();
        deps.sort();
        t.deps = deps;
    }
}

/// Longest chain of micro plans along dependency paths.
pub fn autoregressive_depth(graph: &TaskGraph) -> u32 {
    let Ok(order) = graph.topological_order() else {
        return 0;
    };
    let index = graph.index();
    let mut depth = vec![0u32; graph.tasks.len()];
    for i in order {
        let t = &graph.tasks[i];
        let inherited = t
            .deps
            .iter()
            .filter_map(|d| index.get(d))
            .map(|&j| depth[j])
            .max()
            .unwrap_or(0);
        depth[i] = inherited + u32::from(t.kind == TaskKind::MicroPlan);
    }
    depth.into_iter().max().unwrap_or(0)
}

/// Chain length of a frame-by-frame autoregressive generator over `t` frames.
pub fn frame_ar_depth(t: u32) -> u32 {
    t
}
