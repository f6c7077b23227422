//! Timed task graphs shared by the planners, the scheduler and the exporters.
//!
//! A [`TaskGraph`] is a DAG of [`Task`]s. Each task names the GPU group it runs
//! on, how many GPUs of that group it occupies, its duration in integer
//! milliseconds and the memory it holds on every assigned GPU while running.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::mmpl::GenerationConfig;

/// Identifier of a task, unique within one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    MicroPlan,
    /// Frames strictly between `t_a` and `t_b`.
    PopulateA,
    /// Frames strictly between `t_b` and `t_c`.
    PopulateB,
    BoundaryReencode,
    Recon,
    GuideRender,
    GenFwd,
    GenBwd,
    CriticTeacher,
    CriticTrain,
    Rollout,
    VaeChunk,
    SrChunk,
    Display,
}

impl TaskKind {
    pub const ALL: [TaskKind; 14] = [
        TaskKind::MicroPlan,
        TaskKind::PopulateA,
        TaskKind::PopulateB,
        TaskKind::BoundaryReencode,
        TaskKind::Recon,
        TaskKind::GuideRender,
        TaskKind::GenFwd,
        TaskKind::GenBwd,
        TaskKind::CriticTeacher,
        TaskKind::CriticTrain,
        TaskKind::Rollout,
        TaskKind::VaeChunk,
        TaskKind::SrChunk,
        TaskKind::Display,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::MicroPlan => "MicroPlan",
            TaskKind::PopulateA => "PopulateA",
            TaskKind::PopulateB => "PopulateB",
            TaskKind::BoundaryReencode => "BoundaryReencode",
            TaskKind::Recon => "Recon",
            TaskKind::GuideRender => "GuideRender",
            TaskKind::GenFwd => "GenFwd",
            TaskKind::GenBwd => "GenBwd",
            TaskKind::CriticTeacher => "CriticTeacher",
            TaskKind::CriticTrain => "CriticTrain",
            TaskKind::Rollout => "Rollout",
            TaskKind::VaeChunk => "VaeChunk",
            TaskKind::SrChunk => "SrChunk",
            TaskKind::Display => "Display",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Backward-type stages sort ahead of forward-type stages when the
    /// scheduler breaks ties.
    pub fn is_backward(self) -> bool {
        matches!(self, TaskKind::GenBwd | TaskKind::CriticTrain)
    }

    /// Kinds that never occupy a GPU.
    pub fn is_host(self) -> bool {
        matches!(self, TaskKind::Display)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How many GPUs of its group a task occupies.
///
/// Serialized as an integer count (`0` for host-side tasks) or the string
/// `"group"` for stages that run as a collective over the whole group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GpuDemand {
    None,
    Count(u32),
    WholeGroup,
}

impl GpuDemand {
    /// Number of GPUs occupied inside a group of `group_size` GPUs.
    pub fn resolve(self, group_size: u32) -> u32 {
        match self {
            GpuDemand::None => 0,
            GpuDemand::Count(n) => n,
            GpuDemand::WholeGroup => group_size,
        }
    }
}

impl fmt::Display for GpuDemand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GpuDemand::None => f.write_str("0"),
            GpuDemand::Count(n) => write!(f, "{n}"),
            GpuDemand::WholeGroup => f.write_str("group"),
        }
    }
}

impl Serialize for GpuDemand {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            GpuDemand::None => serializer.serialize_u32(0),
            GpuDemand::Count(n) => serializer.serialize_u32(*n),
            GpuDemand::WholeGroup => serializer.serialize_str("group"),
        }
    }
}

impl<'de> Deserialize<'de> for GpuDemand {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u32),
            Word(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Count(0) => Ok(GpuDemand::None),
            Raw::Count(n) => Ok(GpuDemand::Count(n)),
            Raw::Word(w) if w == "group" => Ok(GpuDemand::WholeGroup),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a GPU count or \"group\", got {w:?}"
            ))),
        }
    }
}

/// One timed unit of work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub segment: Option<u32>,
    pub micro_batch: Option<u32>,
    /// Frame annotation: local frame indices for planning and population
    /// tasks, the global frame index for chunk tasks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<u32>,
    pub deps: Vec<TaskId>,
    pub duration_ms: i64,
    pub group: Option<String>,
    pub gpus: GpuDemand,
    /// Bytes held on each assigned GPU between start and end.
    pub mem_delta_bytes: i64,
}

impl Task {
    pub fn new(id: TaskId, kind: TaskKind) -> Self {
        Self {
            id,
            kind,
            segment: None,
            micro_batch: None,
            frames: Vec::new(),
            deps: Vec::new(),
            duration_ms: 0,
            group: None,
            gpus: GpuDemand::None,
            mem_delta_bytes: 0,
        }
    }

    pub fn with_segment(mut self, s: u32) -> Self {
        self.segment = Some(s);
        self
    }

    pub fn with_micro_batch(mut self, mb: u32) -> Self {
        self.micro_batch = Some(mb);
        self
    }

    pub fn with_frames(mut self, frames: Vec<u32>) -> Self {
        self.frames = frames;
        self
    }

    pub fn with_duration(mut self, ms: i64) -> Self {
        self.duration_ms = ms;
        self
    }

    pub fn on(mut self, group: &str, gpus: GpuDemand) -> Self {
        self.group = Some(group.to_string());
        self.gpus = gpus;
        self
    }

    pub fn depends_on(mut self, dep: TaskId) -> Self {
        self.add_dep(dep);
        self
    }

    pub fn add_dep(&mut self, dep: TaskId) {
        if let Err(pos) = self.deps.binary_search(&dep) {
            self.deps.insert(pos, dep);
        }
    }

    /// Short human label, e.g. `GenFwd mb3` or `PopulateA s1`.
    pub fn label(&self) -> String {
        match (self.micro_batch, self.segment) {
            (Some(mb), _) => format!("{} mb{mb}", self.kind),
            (None, Some(s)) if matches!(self.kind, TaskKind::VaeChunk | TaskKind::SrChunk | TaskKind::Display) => {
                match self.frames.first() {
                    Some(f) => format!("{} f{f}", self.kind),
                    None => format!("{} s{s}", self.kind),
                }
            }
            (None, Some(s)) => format!("{} s{s}", self.kind),
            (None, None) => self.kind.to_string(),
        }
    }
}

/// A DAG of timed tasks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<GenerationConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphViolation {
    #[error("dependency cycle through task {0}")]
    CycleDetected(TaskId),
    #[error("task {task} depends on unknown task {dep}")]
    DanglingDependency { task: TaskId, dep: TaskId },
    #[error("segment {0} has no MicroPlan task")]
    MissingPlanTask(u32),
    #[error("task {0} has negative duration {1} ms")]
    NegativeDuration(TaskId, i64),
    #[error("task id {0} used more than once")]
    DuplicateId(TaskId),
    #[error("task {0} needs a GPU group but names none")]
    MissingGroup(TaskId),
}

impl TaskGraph {
    pub fn new(tasks: Vec<Task>) -> Self {
        Self { tasks, config: None }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: TaskId) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn find(&self, kind: TaskKind, segment: Option<u32>, micro_batch: Option<u32>) -> Option<&Task> {
        self.tasks
            .iter()
            .find(|t| t.kind == kind && t.segment == segment && t.micro_batch == micro_batch)
    }

    pub fn find_mut(&mut self, kind: TaskKind, segment: Option<u32>, micro_batch: Option<u32>) -> Option<&mut Task> {
        self.tasks
            .iter_mut()
            .find(|t| t.kind == kind && t.segment == segment && t.micro_batch == micro_batch)
    }

    pub fn next_id(&self) -> TaskId {
        TaskId(self.tasks.iter().map(|t| t.id.0 + 1).max().unwrap_or(0))
    }

    pub fn edge_count(&self) -> usize {
        self.tasks.iter().map(|t| t.deps.len()).sum()
    }

    /// Map from task id to its position in `tasks`.
    pub fn index(&self) -> BTreeMap<TaskId, usize> {
        self.tasks.iter().enumerate().map(|(i, t)| (t.id, i)).collect()
    }

    /// Task positions in a dependency-respecting order, or the first task
    /// found on a cycle. Dangling dependencies are ignored.
    pub fn topological_order(&self) -> Result<Vec<usize>, TaskId> {
        let index = self.index();
        let n = self.tasks.len();
        let mut indegree = vec![0usize; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, t) in self.tasks.iter().enumerate() {
            for d in &t.deps {
                if let Some(&j) = index.get(d) {
                    indegree[i] += 1;
                    children[j].push(i);
                }
            }
        }
        let mut ready: BTreeSet<(TaskId, usize)> = (0..n)
            .filter(|&i| indegree[i] == 0)
            .map(|i| (self.tasks[i].id, i))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some((_, i)) = ready.pop_first() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert((self.tasks[c].id, c));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            let stuck = (0..n).filter(|&i| indegree[i] > 0).map(|i| self.tasks[i].id).min();
            Err(stuck.unwrap_or(TaskId(0)))
        }
    }

    /// Positions of all tasks reachable from `from` by following dependency
    /// edges forward (successors), including `from` itself.
    pub fn descendants(&self, from: TaskId) -> BTreeSet<TaskId> {
        let mut children: BTreeMap<TaskId, Vec<TaskId>> = BTreeMap::new();
        for t in &self.tasks {
            for d in &t.deps {
                children.entry(*d).or_default().push(t.id);
            }
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(id) = stack.pop() {
            if seen.insert(id) {
                if let Some(cs) = children.get(&id) {
                    stack.extend(cs.iter().copied());
                }
            }
        }
        seen
    }

    /// True if `to` can be reached from `from` along dependency edges.
    pub fn has_path(&self, from: TaskId, to: TaskId) -> bool {
        self.descendants(from).contains(&to)
    }

    /// Length in milliseconds of the longest dependency chain.
    pub fn critical_path_ms(&self) -> i64 {
        let Ok(order) = self.topological_order() else {
            return 0;
        };
        let index = self.index();
        let mut finish = vec![0i64; self.tasks.len()];
        for i in order {
            let t = &self.tasks[i];
            let start = t
                .deps
                .iter()
                .filter_map(|d| index.get(d))
                .map(|&j| finish[j])
                .max()
                .unwrap_or(0);
            finish[i] = start + t.duration_ms.max(0);
        }
        finish.into_iter().max().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GraphDocument { tasks: &self.tasks })
            .expect("task graph serialization is infallible")
    }
}

#[derive(Serialize)]
struct GraphDocument<'a> {
    tasks: &'a [Task],
}

/// Structural checks: cycles, dangling ids, missing plan tasks, negative
/// durations. Returns every violation found rather than stopping at the first.
pub fn validate_graph(graph: &TaskGraph) -> Result<(), Vec<GraphViolation>> {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    for t in &graph.tasks {
        if !seen.insert(t.id) {
            violations.push(GraphViolation::DuplicateId(t.id));
        }
    }
    for t in &graph.tasks {
        for d in &t.deps {
            if !seen.contains(d) {
                violations.push(GraphViolation::DanglingDependency { task: t.id, dep: *d });
            }
        }
        if t.deps.contains(&t.id) {
            violations.push(GraphViolation::CycleDetected(t.id));
        }
        if t.duration_ms < 0 {
            violations.push(GraphViolation::NegativeDuration(t.id, t.duration_ms));
        }
        if t.gpus != GpuDemand::None && t.group.is_none() {
            violations.push(GraphViolation::MissingGroup(t.id));
        }
    }
    if !violations.iter().any(|v| matches!(v, GraphViolation::CycleDetected(_))) {
        if let Err(id) = graph.topological_order() {
            violations.push(GraphViolation::CycleDetected(id));
        }
    }

    let segments: BTreeSet<u32> = match &graph.config {
        Some(cfg) => (0..cfg.total_segments).collect(),
        None => graph.tasks.iter().filter_map(|t| t.segment).collect(),
    };
    for s in segments {
        let has_plan = graph
            .tasks
            .iter()
            .any(|t| t.kind == TaskKind::MicroPlan && t.segment == Some(s));
        if !has_plan {
            violations.push(GraphViolation::MissingPlanTask(s));
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
