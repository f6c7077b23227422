//! Generator-step and critic-step training pipelines.
//!
//! The generator step pushes each micro-batch through generator forward,
//! the merged critic/teacher forward, and generator backward. The critic
//! step freezes the generator: rollouts feed critic updates. Both are
//! simulated under the sequential baseline and the greedy pipeline.

use serde::{Deserialize, Serialize};

use crate::graph::{GpuDemand, Task, TaskGraph, TaskId, TaskKind};
use crate::resources::{Placement, Role};
use crate::sched::{metrics, simulate, Policy, SchedError, Schedule, SimGroup};

pub const GENERATOR_GROUP: &str = "generator";
pub const CRITIC_TEACHER_GROUP: &str = "critic_teacher";
pub const CRITIC_GROUP: &str = "critic";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("{field} must be {requirement}")]
    InvalidCost { field: &'static str, requirement: &'static str },
    #[error("at least 3 GPUs are needed, got {0}")]
    InsufficientGpus(u32),
    #[error("placement has no {0} group")]
    MissingRole(&'static str),
    #[error(transparent)]
    Sched(#[from] SchedError),
}

/// Per-micro-batch stage durations in milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCostModel {
    /// Full forward unroll of one micro-batch over the fixed denoising steps.
    pub gen_fwd_ms: i64,
    pub gen_bwd_ms: i64,
    pub critic_fwd_ms: i64,
    pub teacher_fwd_ms: i64,
    pub rollout_ms: i64,
    pub critic_train_ms: i64,
    pub denoising_steps: u32,
    pub gen_microbatches: u32,
    pub critic_microbatches: u32,
    /// Critic steps per generator step in one training iteration.
    pub critic_steps_per_gen_step: u32,
    /// Stages occupy their whole group rather than one GPU.
    pub group_wide_stages: bool,
}

impl Default for TrainCostModel {
    fn default() -> Self {
        Self {
            gen_fwd_ms: 1,
            gen_bwd_ms: 1,
            critic_fwd_ms: 2,
            teacher_fwd_ms: 2,
            rollout_ms: 1,
            critic_train_ms: 1,
            denoising_steps: 4,
            gen_microbatches: 7,
            critic_microbatches: 4,
            critic_steps_per_gen_step: 1,
            group_wide_stages: true,
        }
    }
}

impl TrainCostModel {
    pub fn validate(&self) -> Result<(), TrainError> {
        let durations = [
            ("gen_fwd_ms", self.gen_fwd_ms),
            ("gen_bwd_ms", self.gen_bwd_ms),
            ("critic_fwd_ms", self.critic_fwd_ms),
            ("teacher_fwd_ms", self.teacher_fwd_ms),
            ("rollout_ms", self.rollout_ms),
            ("critic_train_ms", self.critic_train_ms),
        ];
        for (field, v) in durations {
            if v < 0 {
                return Err(TrainError::InvalidCost {
                    field,
                    requirement: ">= 0",
                });
            }
        }
        let counts = [
            ("denoising_steps", self.denoising_steps),
            ("gen_microbatches", self.gen_microbatches),
            ("critic_microbatches", self.critic_microbatches),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(TrainError::InvalidCost {
                    field,
                    requirement: ">= 1",
                });
            }
        }
        Ok(())
    }

    /// Merged critic/teacher cell length.
    pub fn ct_ms(&self) -> i64 {
        self.critic_fwd_ms.max(self.teacher_fwd_ms)
    }

    fn demand(&self) -> GpuDemand {
        if self.group_wide_stages {
            GpuDemand::WholeGroup
        } else {
            GpuDemand::Count(1)
        }
    }
}

/// GPU counts of the three training roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCluster {
    pub generator: u32,
    pub critic: u32,
    pub teacher: u32,
}

impl Default for TrainCluster {
    fn default() -> Self {
        Self {
            generator: 4,
            critic: 1,
            teacher: 1,
        }
    }
}

impl TrainCluster {
    pub fn total(&self) -> u32 {
        self.generator + self.critic + self.teacher
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (field, v) in [("generator", self.generator), ("critic", self.critic), ("teacher", self.teacher)] {
            if v == 0 {
                return Err(TrainError::InvalidCost {
                    field,
                    requirement: ">= 1",
                });
            }
        }
        Ok(())
    }

    pub fn from_placement(p: &Placement) -> Result<Self, TrainError> {
        let count = |role: Role| {
            p.group(role)
                .map(|g| g.group.gpu_count)
                .ok_or(TrainError::MissingRole(role.name()))
        };
        Ok(Self {
            generator: count(Role::Generator)?,
            critic: count(Role::Critic)?,
            teacher: count(Role::Teacher)?,
        })
    }

    /// Generator step: critic and teacher act as one merged group.
    pub fn generator_step_groups(&self) -> Vec<SimGroup> {
        vec![
            SimGroup::new(GENERATOR_GROUP, self.generator),
            SimGroup::new(CRITIC_TEACHER_GROUP, self.critic + self.teacher),
        ]
    }

    pub fn critic_step_groups(&self) -> Vec<SimGroup> {
        vec![
            SimGroup::new(GENERATOR_GROUP, self.generator),
            SimGroup::new(CRITIC_GROUP, self.critic),
        ]
    }
}

/// `GenFwd(i) -> CriticTeacher(i) -> GenBwd(i)` for micro-batches `1..=m`.
pub fn generator_step_graph(cost: &TrainCostModel) -> TaskGraph {
    let demand = cost.demand();
    let mut tasks = Vec::new();
    for mb in 1..=cost.gen_microbatches {
        let base = 3 * (mb - 1);
        tasks.push(
            Task::new(TaskId(base), TaskKind::GenFwd)
                .with_micro_batch(mb)
                .with_duration(cost.gen_fwd_ms)
                .on(GENERATOR_GROUP, demand),
        );
        tasks.push(
            Task::new(TaskId(base + 1), TaskKind::CriticTeacher)
                .with_micro_batch(mb)
                .with_duration(cost.ct_ms())
                .on(CRITIC_TEACHER_GROUP, demand)
                .depends_on(TaskId(base)),
        );
        tasks.push(
            Task::new(TaskId(base + 2), TaskKind::GenBwd)
                .with_micro_batch(mb)
                .with_duration(cost.gen_bwd_ms)
                .on(GENERATOR_GROUP, demand)
                .depends_on(TaskId(base + 1)),
        );
    }
    TaskGraph::new(tasks)
}

/// `Rollout(i) -> CriticTrain(i)` for micro-batches `1..=m`.
pub fn critic_step_graph(cost: &TrainCostModel) -> TaskGraph {
    let demand = cost.demand();
    let mut tasks = Vec::new();
    for mb in 1..=cost.critic_microbatches {
        let base = 2 * (mb - 1);
        tasks.push(
            Task::new(TaskId(base), TaskKind::Rollout)
                .with_micro_batch(mb)
                .with_duration(cost.rollout_ms)
                .on(GENERATOR_GROUP, demand),
        );
        tasks.push(
            Task::new(TaskId(base + 1), TaskKind::CriticTrain)
                .with_micro_batch(mb)
                .with_duration(cost.critic_train_ms)
                .on(CRITIC_GROUP, demand)
                .depends_on(TaskId(base)),
        );
    }
    TaskGraph::new(tasks)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatternError {
    #[error("schedule is not a generator-step schedule")]
    PatternNotApplicable,
    #[error("stable-phase pattern breaks at micro-batch {0}")]
    Mismatch(u32),
}

/// Checks that for every stable index `i` in `1..=m-2`, `GenBwd(i)` and
/// `GenFwd(i+2)` both run inside the interval of `CriticTeacher(i+1)`.
pub fn stable_phase_pattern(schedule: &Schedule, graph: &TaskGraph, m: u32) -> Result<(), PatternError> {
    let interval = |kind: TaskKind, mb: u32| -> Result<(i64, i64), PatternError> {
        let t = graph
            .find(kind, None, Some(mb))
            .ok_or(PatternError::PatternNotApplicable)?;
        let e = schedule.entry(t.id).ok_or(PatternError::PatternNotApplicable)?;
        Ok((e.start_ms, e.end_ms))
    };
    for mb in 1..=m {
        for kind in [TaskKind::GenFwd, TaskKind::CriticTeacher, TaskKind::GenBwd] {
            interval(kind, mb)?;
        }
    }
    for i in 1..=m.saturating_sub(2) {
        let (cs, ce) = interval(TaskKind::CriticTeacher, i + 1)?;
        let (bs, be) = interval(TaskKind::GenBwd, i)?;
        let (fs, fe) = interval(TaskKind::GenFwd, i + 2)?;
        if !(cs <= bs && be <= ce && cs <= fs && fe <= ce) {
            return Err(PatternError::Mismatch(i));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepTiming {
    pub baseline_ms: i64,
    pub pipelined_ms: i64,
    pub speedup: f64,
}

impl StepTiming {
    fn new(baseline_ms: i64, pipelined_ms: i64) -> Self {
        let speedup = if pipelined_ms > 0 {
            baseline_ms as f64 / pipelined_ms as f64
        } else {
            1.0
        };
        Self {
            baseline_ms,
            pipelined_ms,
            speedup,
        }
    }
}

/// Simulated schedules and timings of one training iteration.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub generator_graph: TaskGraph,
    pub critic_graph: TaskGraph,
    pub generator_groups: Vec<SimGroup>,
    pub critic_groups: Vec<SimGroup>,
    pub generator_baseline: Schedule,
    pub generator_pipelined: Schedule,
    pub critic_baseline: Schedule,
    pub critic_pipelined: Schedule,
    pub generator: StepTiming,
    pub critic: StepTiming,
    /// One generator step plus `critic_steps_per_gen_step` critic steps.
    pub end_to_end: StepTiming,
    /// Bubble ratio of the generator group in the pipelined generator step.
    pub gen_bubble: f64,
    /// Bubble ratio of the critic/teacher group in the pipelined generator step.
    pub ct_bubble: f64,
}

/// Runs baseline and pipelined schedules for both steps. `policy` selects
/// the pipelined policy; the baseline is always strict sequential.
pub fn simulate_iteration(cost: &TrainCostModel, cluster: TrainCluster, policy: Policy) -> Result<TrainRun, TrainError> {
    cost.validate()?;
    cluster.validate()?;
    let generator_graph = generator_step_graph(cost);
    let critic_graph = critic_step_graph(cost);
    let generator_groups = cluster.generator_step_groups();
    let critic_groups = cluster.critic_step_groups();

    let generator_baseline = simulate(&generator_graph, &generator_groups, Policy::baseline())?;
    let generator_pipelined = simulate(&generator_graph, &generator_groups, policy)?;
    let critic_baseline = simulate(&critic_graph, &critic_groups, Policy::baseline())?;
    let critic_pipelined = simulate(&critic_graph, &critic_groups, policy)?;

    let generator = StepTiming::new(generator_baseline.makespan_ms(), generator_pipelined.makespan_ms());
    let critic = StepTiming::new(critic_baseline.makespan_ms(), critic_pipelined.makespan_ms());
    let k = i64::from(cost.critic_steps_per_gen_step);
    let end_to_end = StepTiming::new(
        generator.baseline_ms + k * critic.baseline_ms,
        generator.pipelined_ms + k * critic.pipelined_ms,
    );

    let m = metrics(&generator_pipelined, &generator_graph, &generator_groups);
    let bubble = |name: &str| m.group(name).map_or(0.0, |g| g.bubble_ratio);
    let gen_bubble = bubble(GENERATOR_GROUP);
    let ct_bubble = bubble(CRITIC_TEACHER_GROUP);

    Ok(TrainRun {
        generator_graph,
        critic_graph,
        generator_groups,
        critic_groups,
        generator_baseline,
        generator_pipelined,
        critic_baseline,
        critic_pipelined,
        generator,
        critic,
        end_to_end,
        gen_bubble,
        ct_bubble,
    })
}

/// Baseline vs greedy-pipelined timings on the cluster described by `alloc`.
pub fn speedup(cost: &TrainCostModel, alloc: &Placement) -> Result<TrainRun, TrainError> {
    simulate_iteration(cost, TrainCluster::from_placement(alloc)?, Policy::greedy())
}

/// Abstract work per micro-batch; a stage on `n` GPUs takes `work / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkModel {
    pub gen_fwd_work: f64,
    pub gen_bwd_work: f64,
    pub critic_work: f64,
    pub teacher_work: f64,
}

impl Default for WorkModel {
    fn default() -> Self {
        Self {
            gen_fwd_work: 2.0,
            gen_bwd_work: 2.0,
            critic_work: 1.0,
            teacher_work: 1.0,
        }
    }
}

impl WorkModel {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fields = [
            ("gen_fwd_work", self.gen_fwd_work),
            ("gen_bwd_work", self.gen_bwd_work),
            ("critic_work", self.critic_work),
            ("teacher_work", self.teacher_work),
        ];
        for (field, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrainError::InvalidCost {
                    field,
                    requirement: "> 0",
                });
            }
        }
        Ok(())
    }

    /// Stage times (generator fwd+bwd, critic, teacher) on a composition.
    pub fn stage_times(&self, (g, c, t): (u32, u32, u32)) -> [f64; 3] {
        [
            (self.gen_fwd_work + self.gen_bwd_work) / f64::from(g),
            self.critic_work / f64::from(c),
            self.teacher_work / f64::from(t),
        ]
    }

    pub fn allocation(&self, ratio: (u32, u32, u32)) -> Allocation {
        let times = self.stage_times(ratio);
        let slot = times.iter().copied().fold(f64::MIN, f64::max);
        let shortest = times.iter().copied().fold(f64::MAX, f64::min);
        Allocation {
            ratio,
            slot,
            imbalance: 1.0 - shortest / slot,
        }
    }

    /// Integer cost model for a composition: each stage takes
    /// `ceil(work * scale_ms / gpus)` milliseconds.
    pub fn cost_model(&self, (g, c, t): (u32, u32, u32), scale_ms: f64, base: &TrainCostModel) -> TrainCostModel {
        let ms = |work: f64, n: u32| (work * scale_ms / f64::from(n)).ceil() as i64;
        TrainCostModel {
            gen_fwd_ms: ms(self.gen_fwd_work, g),
            gen_bwd_ms: ms(self.gen_bwd_work, g),
            critic_fwd_ms: ms(self.critic_work, c),
            teacher_fwd_ms: ms(self.teacher_work, t),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Allocation {
    pub ratio: (u32, u32, u32),
    /// Longest stage time, which sets the pipeline slot.
    pub slot: f64,
    /// `1 - shortest / longest` stage time; 0 means perfectly balanced.
    pub imbalance: f64,
}

/// Every `(g, c, t)` with positive parts summing to `total`, largest `g`
/// first, then largest `c`.
pub fn compositions(total: u32) -> Vec<(u32, u32, u32)> {
    let mut out = Vec::new();
    for g in (1..total.saturating_sub(1)).rev() {
        for c in (1..total - g).rev() {
            out.push((g, c, total - g - c));
        }
    }
    out
}

/// Exhaustive search for the composition minimizing the longest stage.
/// Ties go to the larger generator share.
pub fn balance_allocation(total_gpus: u32, work: &WorkModel) -> Result<Allocation, TrainError> {
    if total_gpus < 3 {
        return Err(TrainError::InsufficientGpus(total_gpus));
    }
    work.validate()?;
    let mut best: Option<Allocation> = None;
    for ratio in compositions(total_gpus) {
        let a = work.allocation(ratio);
        if best.is_none_or(|b| a.slot < b.slot) {
            best = Some(a);
        }
    }
    Ok(best.expect("total >= 3 has at least one composition"))
}
