//! Streaming inference timeline.
//!
//! Segment planning and population run on the denoise GPUs. Every latent
//! frame that survives into the output stream is one latent chunk: it is
//! decoded by the streamed VAE into `vae_chunk_frames` video frames, passed
//! through super-resolution and displayed. Chunks display in order.

use serde::{Deserialize, Serialize};

use crate::graph::{GpuDemand, Task, TaskGraph, TaskId, TaskKind};
use crate::mmpl::{build_macro_chain, output_frames, unique_frame_count, AnchorSet, ChainMode, GenerationConfig, MmplError};
use crate::sched::{metrics, simulate, Policy, SchedError, Schedule, SimGroup, TraceMetrics};

pub const DENOISE_GROUP: &str = "denoise";
pub const VAE_GROUP: &str = "vae";
pub const SR_GROUP: &str = "sr";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StreamError {
    #[error("{field} must be {requirement}")]
    InvalidCost { field: &'static str, requirement: &'static str },
    #[error("throughput needs at least 2 display events, got {0}")]
    InsufficientStream(usize),
    #[error("frame rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error(transparent)]
    Mmpl(#[from] MmplError),
    #[error(transparent)]
    Sched(#[from] SchedError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceCostModel {
    /// One denoising step of one latent frame.
    pub denoise_step_ms: i64,
    pub denoise_steps_per_chunk: u32,
    /// Video frames decoded from one latent chunk.
    pub vae_chunk_frames: u32,
    pub vae_first_chunk_ms: i64,
    /// Later chunks reuse cached temporal features.
    pub vae_cached_chunk_ms: i64,
    pub sr_chunk_frames: u32,
    pub sr_chunk_ms: i64,
    pub inference_gpus: u32,
    pub denoise_gpus: u32,
    pub vae_gpus: u32,
    pub sr_gpus: u32,
    /// Chunks buffered ahead of display.
    pub buffer_chunks: u32,
    pub output_resolution: String,
    pub reencode_ms: i64,
    pub recon_ms: i64,
    pub guide_ms: i64,
    /// Working memory per latent frame held by a planning or population task.
    pub kv_bytes_per_latent_frame: i64,
}

impl Default for InferenceCostModel {
    fn default() -> Self {
        Self {
            denoise_step_ms: 250,
            denoise_steps_per_chunk: 3,
            vae_chunk_frames: 4,
            vae_first_chunk_ms: 400,
            vae_cached_chunk_ms: 150,
            sr_chunk_frames: 5,
            sr_chunk_ms: 294,
            inference_gpus: 4,
            denoise_gpus: 2,
            vae_gpus: 1,
            sr_gpus: 1,
            buffer_chunks: 3,
            output_resolution: "960x1760".to_string(),
            reencode_ms: 100,
            recon_ms: 100,
            guide_ms: 100,
            kv_bytes_per_latent_frame: 1 << 30,
        }
    }
}

impl InferenceCostModel {
    pub fn validate(&self) -> Result<(), StreamError> {
        let durations = [
            ("denoise_step_ms", self.denoise_step_ms),
            ("vae_first_chunk_ms", self.vae_first_chunk_ms),
            ("vae_cached_chunk_ms", self.vae_cached_chunk_ms),
            ("sr_chunk_ms", self.sr_chunk_ms),
            ("reencode_ms", self.reencode_ms),
            ("recon_ms", self.recon_ms),
            ("guide_ms", self.guide_ms),
            ("kv_bytes_per_latent_frame", self.kv_bytes_per_latent_frame),
        ];
        for (field, v) in durations {
            if v < 0 {
                return Err(StreamError::InvalidCost {
                    field,
                    requirement: ">= 0",
                });
            }
        }
        let counts = [
            ("denoise_steps_per_chunk", self.denoise_steps_per_chunk),
            ("vae_chunk_frames", self.vae_chunk_frames),
            ("sr_chunk_frames", self.sr_chunk_frames),
            ("inference_gpus", self.inference_gpus),
            ("denoise_gpus", self.denoise_gpus),
            ("vae_gpus", self.vae_gpus),
            ("sr_gpus", self.sr_gpus),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(StreamError::InvalidCost {
                    field,
                    requirement: ">= 1",
                });
            }
        }
        if self.vae_cached_chunk_ms > self.vae_first_chunk_ms {
            return Err(StreamError::InvalidCost {
                field: "vae_cached_chunk_ms",
                requirement: "<= vae_first_chunk_ms",
            });
        }
        if self.denoise_gpus + self.vae_gpus + self.sr_gpus != self.inference_gpus {
            return Err(StreamError::InvalidCost {
                field: "inference_gpus",
                requirement: "denoise_gpus + vae_gpus + sr_gpus",
            });
        }
        Ok(())
    }

    pub fn groups(&self) -> Vec<SimGroup> {
        vec![
            SimGroup::new(DENOISE_GROUP, self.denoise_gpus),
            SimGroup::new(VAE_GROUP, self.vae_gpus),
            SimGroup::new(SR_GROUP, self.sr_gpus),
        ]
    }

    /// Denoising time of `frames` latent frames.
    pub fn denoise_ms(&self, frames: usize) -> i64 {
        frames as i64 * i64::from(self.denoise_steps_per_chunk) * self.denoise_step_ms
    }

    /// SR time of one latent chunk, scaled from the SR chunk size.
    pub fn sr_ms_per_latent_chunk(&self) -> i64 {
        let num = i64::from(self.vae_chunk_frames) * self.sr_chunk_ms;
        let den = i64::from(self.sr_chunk_frames);
        (num + den - 1) / den
    }

    /// Steady-state SR throughput in frames per second.
    pub fn sr_stage_fps(&self) -> f64 {
        f64::from(self.sr_chunk_frames) * f64::from(self.sr_gpus) * 1000.0 / self.sr_chunk_ms as f64
    }

    /// Steady-state VAE throughput with a warm feature cache.
    pub fn vae_stage_fps(&self) -> f64 {
        f64::from(self.vae_chunk_frames) * 1000.0 / self.vae_cached_chunk_ms as f64
    }
}

/// VAE, SR and display tasks for `n_chunks` chunks with ids from `first_id`.
/// Chunk `k` is decoded after chunk `k - 1`; denoise dependencies are left to
/// the caller.
pub fn chunk_pipeline_tasks(n_chunks: u32, cost: &InferenceCostModel, first_id: u32) -> Vec<Task> {
    let sr_ms = cost.sr_ms_per_latent_chunk();
    let mut tasks = Vec::with_capacity(3 * n_chunks as usize);
    for k in 0..n_chunks {
        let vae = TaskId(first_id + 3 * k);
        let sr = TaskId(first_id + 3 * k + 1);
        let show = TaskId(first_id + 3 * k + 2);
        let frame = k + 1;
        let mut v = Task::new(vae, TaskKind::VaeChunk)
            .with_frames(vec![frame])
            .with_duration(if k == 0 {
                cost.vae_first_chunk_ms
            } else {
                cost.vae_cached_chunk_ms
            })
            .on(VAE_GROUP, GpuDemand::Count(1));
        let mut d = Task::new(show, TaskKind::Display)
            .with_frames(video_frames(k, cost.vae_chunk_frames))
            .depends_on(sr);
        if k > 0 {
            v.add_dep(TaskId(vae.0 - 3));
            d.add_dep(TaskId(show.0 - 3));
        }
        tasks.push(v);
        tasks.push(
            Task::new(sr, TaskKind::SrChunk)
                .with_frames(vec![frame])
                .with_duration(sr_ms)
                .on(SR_GROUP, GpuDemand::Count(1))
                .depends_on(vae),
        );
        tasks.push(d);
    }
    tasks
}

/// 1-based video frames shown by chunk `k` (0-based).
fn video_frames(k: u32, per_chunk: u32) -> Vec<u32> {
    (k * per_chunk + 1..=(k + 1) * per_chunk).collect()
}

/// Timing of one displayed chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChunkEvent {
    pub chunk_id: u32,
    /// Global latent frame index.
    pub global_frame: u32,
    pub segment: u32,
    pub denoise_done_ms: i64,
    pub vae_done_ms: i64,
    pub sr_done_ms: i64,
    pub display_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamTrace {
    pub chunks: Vec<ChunkEvent>,
}

/// `frames × (n − 1) / (last − first)` over the display events.
pub fn throughput_fps(trace: &StreamTrace, frames_per_chunk: u32) -> Result<f64, StreamError> {
    let n = trace.chunks.len();
    if n < 2 {
        return Err(StreamError::InsufficientStream(n));
    }
    let first = trace.chunks.iter().map(|c| c.display_ms).min().unwrap_or(0);
    let last = trace.chunks.iter().map(|c| c.display_ms).max().unwrap_or(0);
    if last <= first {
        return Ok(f64::INFINITY);
    }
    Ok(f64::from(frames_per_chunk) * (n - 1) as f64 * 1000.0 / (last - first) as f64)
}

/// Seconds of output stream held in the pre-display buffer.
pub fn feedback_latency(cost: &InferenceCostModel, fps: f64) -> Result<f64, StreamError> {
    if cost.buffer_chunks == 0 {
        return Ok(0.0);
    }
    if !(fps > 0.0) {
        return Err(StreamError::InvalidRate(fps));
    }
    Ok(f64::from(cost.buffer_chunks) * f64::from(cost.vae_chunk_frames) / fps)
}

#[derive(Debug, Clone)]
pub struct StreamRun {
    pub graph: TaskGraph,
    pub groups: Vec<SimGroup>,
    pub schedule: Schedule,
    pub trace: StreamTrace,
    pub metrics: TraceMetrics,
    pub fps: f64,
    pub latency_s: f64,
    /// Highest per-GPU memory over the run.
    pub peak_mem_bytes: i64,
    pub reuse_ratio: f64,
}

/// Builds the full streaming graph: planning chain with costs attached, then
/// one VAE, SR and display task per output latent frame.
pub fn build_stream_graph(gen: &GenerationConfig, cost: &InferenceCostModel) -> Result<TaskGraph, StreamError> {
    cost.validate()?;
    let anchors = gen.validate()?;
    let mut graph = build_macro_chain(gen)?;
    let last_segment = gen.total_segments - 1;
    let kv = cost.kv_bytes_per_latent_frame;

    for t in &mut graph.tasks {
        let seg = t.segment.unwrap_or(0);
        let (duration, held_frames) = match t.kind {
            TaskKind::MicroPlan => (cost.denoise_ms(3), 1 + 3),
            TaskKind::PopulateA => (cost.denoise_ms(t.frames.len()), 3 + t.frames.len()),
            TaskKind::PopulateB => {
                let superseded = gen.chain_mode == ChainMode::MinMemoryPeak && seg < last_segment;
                if superseded {
                    (0, 0)
                } else {
                    (cost.denoise_ms(t.frames.len()), 3 + t.frames.len())
                }
            }
            TaskKind::BoundaryReencode => (cost.reencode_ms, 2),
            TaskKind::Recon => (cost.recon_ms, 0),
            TaskKind::GuideRender => (cost.guide_ms, 0),
            _ => (0, 0),
        };
        t.duration_ms = duration;
        t.mem_delta_bytes = held_frames as i64 * kv;
        t.group = Some(DENOISE_GROUP.to_string());
        t.gpus = GpuDemand::Count(1);
    }

    let frames: Vec<_> = output_frames(gen.total_segments, gen.frames_per_segment, &anchors, gen.chain_mode)
        .into_iter()
        .filter(|f| f.global_index > 1)
        .collect();
    let first_id = graph.next_id().0;
    let mut chunk_tasks = chunk_pipeline_tasks(frames.len() as u32, cost, first_id);
    for (k, f) in frames.iter().enumerate() {
        let producer = producer_kind(f.local_index, &anchors);
        let producer = graph
            .find(producer, Some(f.segment), None)
            .expect("every segment has its four tasks")
            .id;
        for t in &mut chunk_tasks[3 * k..3 * k + 3] {
            t.segment = Some(f.segment);
            if t.kind != TaskKind::Display {
                t.frames = vec![f.global_index];
            }
        }
        let vae = &mut chunk_tasks[3 * k];
        vae.add_dep(producer);
        if f.segment > 0 {
            let reencode = graph
                .find(TaskKind::BoundaryReencode, Some(f.segment - 1), None)
                .expect("previous segment exists")
                .id;
            vae.add_dep(reencode);
        }
    }
    graph.tasks.extend(chunk_tasks);
    Ok(graph)
}

fn producer_kind(local: u32, anchors: &AnchorSet) -> TaskKind {
    if anchors.as_array().contains(&local) {
        TaskKind::MicroPlan
    } else if local < anchors.t_b {
        TaskKind::PopulateA
    } else {
        TaskKind::PopulateB
    }
}

/// Simulates one stream under the greedy policy and derives its metrics.
pub fn streaming_timeline(gen: &GenerationConfig, cost: &InferenceCostModel) -> Result<StreamRun, StreamError> {
    streaming_timeline_with(gen, cost, Policy::greedy())
}

pub fn streaming_timeline_with(gen: &GenerationConfig, cost: &InferenceCostModel, policy: Policy) -> Result<StreamRun, StreamError> {
    let graph = build_stream_graph(gen, cost)?;
    let groups = cost.groups();
    let schedule = simulate(&graph, &groups, policy)?;
    let trace = stream_trace(&graph, &schedule);
    let mut m = metrics(&schedule, &graph, &groups);
    let fps = throughput_fps(&trace, cost.vae_chunk_frames)?;
    let latency_s = feedback_latency(cost, fps)?;
    m.throughput_fps = Some(fps);
    m.feedback_latency_s = Some(latency_s);
    let anchors = gen.validate()?;
    let reuse_ratio = unique_frame_count(gen.total_segments, gen.frames_per_segment, &anchors, gen.chain_mode).reuse_ratio;
    Ok(StreamRun {
        peak_mem_bytes: m.peak_memory_max(),
        graph,
        groups,
        schedule,
        trace,
        metrics: m,
        fps,
        latency_s,
        reuse_ratio,
    })
}

/// Per-chunk event times read off a simulated stream schedule.
pub fn stream_trace(graph: &TaskGraph, schedule: &Schedule) -> StreamTrace {
    let end = |id: TaskId| schedule.entry(id).map_or(0, |e| e.end_ms);
    let mut chunks = Vec::new();
    let vaes = graph.tasks.iter().filter(|t| t.kind == TaskKind::VaeChunk);
    for (k, vae) in vaes.enumerate() {
        let sr = graph
            .tasks
            .iter()
            .find(|t| t.kind == TaskKind::SrChunk && t.deps.contains(&vae.id));
        let show = sr.and_then(|sr| graph.tasks.iter().find(|t| t.kind == TaskKind::Display && t.deps.contains(&sr.id)));
        let denoise_done_ms = vae
            .deps
            .iter()
            .filter_map(|d| graph.get(*d))
            .filter(|d| !matches!(d.kind, TaskKind::VaeChunk | TaskKind::BoundaryReencode))
            .map(|d| end(d.id))
            .max()
            .unwrap_or(0);
        chunks.push(ChunkEvent {
            chunk_id: k as u32 + 1,
            global_frame: vae.frames.first().copied().unwrap_or(0),
            segment: vae.segment.unwrap_or(0),
            denoise_done_ms,
            vae_done_ms: end(vae.id),
            sr_done_ms: sr.map_or(0, |t| end(t.id)),
            display_ms: show.map_or(0, |t| end(t.id)),
        });
    }
    StreamTrace { chunks }
}
