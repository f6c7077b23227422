//! Command-line front end. Each scenario writes its artifacts into the
//! output directory and returns a process exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{load_config, parse_chain, ConfigError, RunConfig};
use crate::guidance::{parse_key_trace, pose_csv, replay, GuidanceError};
use crate::mmpl::{autoregressive_depth, frame_ar_depth, unique_frame_count, ChainMode};
use crate::report::{chunks_csv, csv_table, gantt_svg, metrics_csv, train_row, TRAIN_HEADER};
use crate::resources::{check_feasibility, memory_csv, Feasibility, ResourceError};
use crate::sched::trace::{from_chrome_trace, to_chrome_trace, TraceError};
use crate::sched::{metrics, simulate, validate_schedule, Policy, SchedError, Schedule, SimGroup};
use crate::stream::{build_stream_graph, streaming_timeline_with, StreamError};
use crate::graph::{TaskGraph, TaskKind};
use crate::train::{
    balance_allocation, compositions, simulate_iteration, stable_phase_pattern, PatternError, TrainCluster, TrainError,
};

#[derive(Debug, Parser)]
#[command(name = "worldpipe", version, about = "Schedule simulator for segment-planned video world models")]
pub struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "WORLDPIPE_OUT")]
    pub out: Option<PathBuf>,
    /// Pipelined scheduling policy: greedy, slotted or baseline.
    #[arg(long, global = true, default_value = "greedy")]
    pub policy: String,
    /// Segment chaining: terminal or minmem. Overrides the config.
    #[arg(long, global = true)]
    pub chain: Option<String>,
    /// Recorded in the summary; every scenario is deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and schedule the segment planning graph.
    Plan,
    /// Generator-step and critic-step training pipelines.
    TrainSim,
    /// Streaming inference timeline.
    InferSim,
    /// Replay a key trace into a pose log.
    Replay {
        #[arg(long)]
        keys: PathBuf,
    },
    /// Run one scenario per value of a parameter.
    Sweep {
        #[arg(long)]
        param: String,
        /// Comma-separated values; `compositions` for every ratio of the cluster.
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        values: Option<String>,
    },
    /// Check a trace written by this tool.
    Validate { trace: PathBuf },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("train: {0}")]
    Train(#[from] TrainError),
    #[error("stream: {0}")]
    Stream(#[from] StreamError),
    #[error("sched: {0}")]
    Sched(#[from] SchedError),
    #[error("resources: {0}")]
    Resources(#[from] ResourceError),
    #[error("guidance: {0}")]
    Guidance(#[from] GuidanceError),
    #[error("trace: {0}")]
    Trace(#[from] TraceError),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schedule violates {} constraint(s):\n{}", .0.len(), .0.join("\n"))]
    Violations(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

struct Ctx {
    config: RunConfig,
    out: PathBuf,
    policy: Policy,
    seed: u64,
}

impl Ctx {
    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
    }
}

fn chain_name(mode: ChainMode) -> &'static str {
    match mode {
        ChainMode::TerminalChain => "terminal",
        ChainMode::MinMemoryPeak => "minmem",
    }
}

/// Parses arguments, runs the scenario and prints a diagnostic on failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Validate { trace } = &cli.command {
        return validate_trace(trace);
    }
    let mut config = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(chain) = &cli.chain {
        config.generation.chain_mode = parse_chain(chain)
            .ok_or_else(|| ConfigError::Usage(format!("--chain must be terminal or minmem, got {chain:?}")))?;
    }
    let policy = Policy::parse(&cli.policy)
        .ok_or_else(|| ConfigError::Usage(format!("--policy must be greedy, slotted or baseline, got {:?}", cli.policy)))?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("worldpipe-out"));
    std::fs::create_dir_all(&out).map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;
    let ctx = Ctx {
        config,
        out,
        policy,
        seed: cli.seed,
    };
    match &cli.command {
        Command::Plan => plan(&ctx),
        Command::TrainSim => train_sim(&ctx),
        Command::InferSim => infer_sim(&ctx),
        Command::Replay { keys } => replay_keys(&ctx, keys),
        Command::Sweep { param, values } => {
            let values: Vec<String> = values
                .as_deref()
                .unwrap_or("")
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(String::from)
                .collect();
            sweep(&ctx, param, &values)
        }
        Command::Validate { .. } => unreachable!("handled above"),
    }
}

fn check(schedule: &Schedule, graph: &TaskGraph, groups: &[SimGroup]) -> Result<(), CliError> {
    validate_schedule(schedule, graph, groups)
        .map_err(|v| CliError::Violations(v.iter().map(|x| x.to_string()).collect()))
}

fn header(ctx: &Ctx, scenario: &str) -> String {
    format!(
        "scenario={scenario}\nconfig={}\npolicy={}\nseed={}\n",
        ctx.config.name,
        ctx.policy.name(),
        ctx.seed
    )
}

fn plan(ctx: &Ctx) -> Result<(), CliError> {
    let gen = &ctx.config.generation;
    let cost = &ctx.config.inference;
    let graph = build_stream_graph(gen, cost)?;
    let groups = cost.groups();
    let schedule = simulate(&graph, &groups, ctx.policy)?;
    check(&schedule, &graph, &groups)?;
    let m = metrics(&schedule, &graph, &groups);
    let anchors = gen.validate().map_err(StreamError::from)?;
    let frames = unique_frame_count(gen.total_segments, gen.frames_per_segment, &anchors, gen.chain_mode);

    ctx.write("graph.json", &(graph.to_json() + "\n"))?;
    ctx.write("trace.json", &to_chrome_trace(&schedule, &graph, &groups))?;
    ctx.write("gantt.svg", &gantt_svg(&schedule, &graph, &groups, "plan"))?;
    ctx.write("metrics.csv", &metrics_csv(&m, &groups))?;
    let mut s = header(ctx, "plan");
    let _ = writeln!(s, "chain={}", chain_name(gen.chain_mode));
    let _ = writeln!(s, "segments={}", gen.total_segments);
    let _ = writeln!(s, "frames_per_segment={}", gen.frames_per_segment);
    let _ = writeln!(s, "anchors={},{},{}", anchors.t_a, anchors.t_b, anchors.t_c);
    let _ = writeln!(s, "tasks={}", graph.len());
    let _ = writeln!(s, "unique_frames={}", frames.unique);
    let _ = writeln!(s, "generated_frames={}", frames.generated);
    let _ = writeln!(s, "reuse_ratio={:.4}", frames.reuse_ratio);
    let _ = writeln!(s, "ar_depth={}", autoregressive_depth(&graph));
    let _ = writeln!(s, "frame_ar_depth={}", frame_ar_depth(frames.unique));
    let _ = writeln!(s, "makespan_ms={}", schedule.makespan_ms());
    ctx.write("summary.txt", &s)
}

fn train_sim(ctx: &Ctx) -> Result<(), CliError> {
    let cost = &ctx.config.train;
    let run = simulate_iteration(cost, ctx.config.cluster, ctx.policy)?;
    check(&run.generator_pipelined, &run.generator_graph, &run.generator_groups)?;
    check(&run.generator_baseline, &run.generator_graph, &run.generator_groups)?;
    check(&run.critic_pipelined, &run.critic_graph, &run.critic_groups)?;

    ctx.write(
        "trace.json",
        &to_chrome_trace(&run.generator_pipelined, &run.generator_graph, &run.generator_groups),
    )?;
    ctx.write(
        "baseline_trace.json",
        &to_chrome_trace(&run.generator_baseline, &run.generator_graph, &run.generator_groups),
    )?;
    ctx.write(
        "critic_trace.json",
        &to_chrome_trace(&run.critic_pipelined, &run.critic_graph, &run.critic_groups),
    )?;
    ctx.write(
        "gantt.svg",
        &gantt_svg(&run.generator_pipelined, &run.generator_graph, &run.generator_groups, "generator step"),
    )?;
    ctx.write(
        "baseline_gantt.svg",
        &gantt_svg(&run.generator_baseline, &run.generator_graph, &run.generator_groups, "generator step baseline"),
    )?;
    ctx.write("metrics.csv", &csv_table(&TRAIN_HEADER, &[train_row(cost, &run)]))?;

    let mut s = header(ctx, "train-sim");
    let _ = writeln!(s, "generator_baseline_ms={}", run.generator.baseline_ms);
    let _ = writeln!(s, "generator_pipelined_ms={}", run.generator.pipelined_ms);
    let _ = writeln!(s, "speedup={:.2}", run.generator.speedup);
    let _ = writeln!(s, "gen_bubble={:.4}", run.gen_bubble);
    let _ = writeln!(s, "ct_bubble={:.4}", run.ct_bubble);
    let _ = writeln!(s, "critic_baseline_ms={}", run.critic.baseline_ms);
    let _ = writeln!(s, "critic_pipelined_ms={}", run.critic.pipelined_ms);
    let _ = writeln!(s, "end_to_end_baseline_ms={}", run.end_to_end.baseline_ms);
    let _ = writeln!(s, "end_to_end_pipelined_ms={}", run.end_to_end.pipelined_ms);
    let _ = writeln!(s, "end_to_end_speedup={:.2}", run.end_to_end.speedup);
    let stable = match stable_phase_pattern(&run.generator_pipelined, &run.generator_graph, cost.gen_microbatches) {
        Ok(()) => "ok".to_string(),
        Err(PatternError::Mismatch(i)) => format!("mismatch at micro-batch {i}"),
        Err(e) => e.to_string(),
    };
    let _ = writeln!(s, "stable_phase={stable}");
    let cluster = ctx.config.cluster;
    if cluster.total() >= 3 {
        let a = balance_allocation(cluster.total(), &ctx.config.work)?;
        let _ = writeln!(
            s,
            "balanced_ratio={}:{}:{} slot={:.3} imbalance={:.3}",
            a.ratio.0, a.ratio.1, a.ratio.2, a.slot, a.imbalance
        );
    }
    if let Some(mem) = &ctx.config.memory {
        let colocated = mem.colocated()?;
        let disaggregated = mem.disaggregated()?;
        for (label, p) in [("colocated", &colocated), ("disaggregated", &disaggregated)] {
            let verdict = match check_feasibility(p) {
                Feasibility::Feasible { min_headroom_bytes } => format!("feasible headroom_bytes={min_headroom_bytes}"),
                Feasibility::Infeasible { role, deficit_bytes, .. } => {
                    format!("infeasible role={} deficit_bytes={deficit_bytes}", role.name())
                }
            };
            let _ = writeln!(s, "memory_{label}_gpus={} {verdict}", p.total_gpus());
        }
        ctx.write(
            "memory.csv",
            &memory_csv(&[("colocated", &colocated), ("disaggregated", &disaggregated)]),
        )?;
    }
    ctx.write("summary.txt", &s)
}

fn infer_sim(ctx: &Ctx) -> Result<(), CliError> {
    let gen = &ctx.config.generation;
    let cost = &ctx.config.inference;
    let run = streaming_timeline_with(gen, cost, ctx.policy)?;
    check(&run.schedule, &run.graph, &run.groups)?;

    ctx.write("trace.json", &to_chrome_trace(&run.schedule, &run.graph, &run.groups))?;
    ctx.write("gantt.svg", &gantt_svg(&run.schedule, &run.graph, &run.groups, "streaming inference"))?;
    ctx.write("metrics.csv", &metrics_csv(&run.metrics, &run.groups))?;
    ctx.write("chunks.csv", &chunks_csv(&run.trace))?;

    let start = |kind, s| {
        run.graph
            .find(kind, Some(s), None)
            .and_then(|t| run.schedule.entry(t.id))
            .map(|e| (e.start_ms, e.end_ms))
    };
    let overlap = match (start(TaskKind::MicroPlan, 1), start(TaskKind::PopulateB, 0)) {
        (Some(plan), Some(pop)) => (plan.0 < pop.1).to_string(),
        _ => "n/a".to_string(),
    };
    let mut s = header(ctx, "infer-sim");
    let _ = writeln!(s, "chain={}", chain_name(gen.chain_mode));
    let _ = writeln!(s, "segments={}", gen.total_segments);
    let _ = writeln!(s, "chunks={}", run.trace.chunks.len());
    let _ = writeln!(s, "fps={:.1}", run.fps);
    let _ = writeln!(s, "latency_s={:.3}", run.latency_s);
    let _ = writeln!(s, "peak_mem_bytes={}", run.peak_mem_bytes);
    let _ = writeln!(s, "reuse_ratio={:.4}", run.reuse_ratio);
    let _ = writeln!(s, "sr_stage_fps={:.2}", cost.sr_stage_fps());
    let _ = writeln!(s, "vae_stage_fps={:.2}", cost.vae_stage_fps());
    let _ = writeln!(s, "makespan_ms={}", run.schedule.makespan_ms());
    let _ = writeln!(s, "plan_overlaps_population={overlap}");
    ctx.write("summary.txt", &s)
}

fn replay_keys(ctx: &Ctx, keys: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(keys).map_err(|source| CliError::Io {
        path: keys.to_path_buf(),
        source,
    })?;
    let events = parse_key_trace(&text)?;
    let poses = replay(&events, &ctx.config.replay)?;
    ctx.write("poses.csv", &pose_csv(&poses))?;
    let mut s = header(ctx, "replay");
    let _ = writeln!(s, "events={}", events.len());
    let _ = writeln!(s, "samples={}", poses.len());
    if let Some((t, p)) = poses.last() {
        let _ = writeln!(
            s,
            "final_t_ms={t}\nfinal_position={:.6},{:.6},{:.6}\nfinal_yaw={:.6}\nfinal_pitch={:.6}",
            p.position[0], p.position[1], p.position[2], p.yaw, p.pitch
        );
    }
    ctx.write("summary.txt", &s)
}

const TRAIN_PARAMS: [&str; 10] = [
    "gen_fwd_ms",
    "gen_bwd_ms",
    "critic_fwd_ms",
    "teacher_fwd_ms",
    "rollout_ms",
    "critic_train_ms",
    "denoising_steps",
    "gen_microbatches",
    "critic_microbatches",
    "critic_steps_per_gen_step",
];

const INFERENCE_PARAMS: [&str; 11] = [
    "denoise_step_ms",
    "denoise_steps_per_chunk",
    "vae_first_chunk_ms",
    "vae_cached_chunk_ms",
    "sr_chunk_ms",
    "buffer_chunks",
    "reencode_ms",
    "recon_ms",
    "guide_ms",
    "total_segments",
    "frames_per_segment",
];

/// Copy of `value` with one numeric field replaced.
fn with_field<T>(value: &T, field: &str, raw: &str) -> Result<T, CliError>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let n: i64 = raw
        .parse()
        .map_err(|_| ConfigError::Usage(format!("sweep value {raw:?} is not an integer")))?;
    let mut json = serde_json::to_value(value).expect("config serializes");
    json[field] = serde_json::Value::from(n);
    serde_json::from_value(json).map_err(|e| {
        CliError::Config(ConfigError::Validation {
            field: field.to_string(),
            message: e.to_string(),
        })
    })
}

fn parse_ratio(raw: &str) -> Result<(u32, u32, u32), CliError> {
    let parts: Vec<u32> = raw.split(':').filter_map(|p| p.parse().ok()).collect();
    match parts[..] {
        [g, c, t] if g > 0 && c > 0 && t > 0 => Ok((g, c, t)),
        _ => Err(ConfigError::Usage(format!("ratio {raw:?} must look like g:c:t with positive parts")).into()),
    }
}

fn sweep(ctx: &Ctx, param: &str, values: &[String]) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = if param == "ratio" {
        let ratios: Vec<(u32, u32, u32)> = if values.len() == 1 && values[0] == "compositions" {
            compositions(cfg.cluster.total())
        } else {
            values.iter().map(|v| parse_ratio(v)).collect::<Result<_, _>>()?
        };
        let rows = ratios
            .par_iter()
            .map(|&(g, c, t)| -> Result<Vec<String>, CliError> {
                let cost = cfg.work.cost_model((g, c, t), 1000.0, &cfg.train);
                let cluster = TrainCluster {
                    generator: g,
                    critic: c,
                    teacher: t,
                };
                let run = simulate_iteration(&cost, cluster, ctx.policy)?;
                let alloc = cfg.work.allocation((g, c, t));
                Ok(vec![
                    format!("{g}:{c}:{t}"),
                    g.to_string(),
                    c.to_string(),
                    t.to_string(),
                    cost.gen_fwd_ms.to_string(),
                    cost.gen_bwd_ms.to_string(),
                    cost.ct_ms().to_string(),
                    run.generator.baseline_ms.to_string(),
                    run.generator.pipelined_ms.to_string(),
                    format!("{:.6}", run.generator.speedup),
                    format!("{:.6}", run.gen_bubble),
                    format!("{:.6}", alloc.slot),
                    format!("{:.6}", alloc.imbalance),
                ])
            })
            .collect::<Result<Vec<_>, _>>()?;
        (
            vec![
                "ratio",
                "g",
                "c",
                "t",
                "gen_fwd_ms",
                "gen_bwd_ms",
                "ct_ms",
                "baseline_ms",
                "pipelined_ms",
                "speedup",
                "gen_bubble",
                "slot",
                "imbalance",
            ],
            rows,
        )
    } else if TRAIN_PARAMS.contains(&param) {
        let rows = values
            .par_iter()
            .map(|v| -> Result<Vec<String>, CliError> {
                let cost = with_field(&cfg.train, param, v)?;
                let run = simulate_iteration(&cost, cfg.cluster, ctx.policy)?;
                let mut row = vec![param.to_string(), v.clone()];
                row.extend(train_row(&cost, &run));
                row.push(run.end_to_end.baseline_ms.to_string());
                row.push(run.end_to_end.pipelined_ms.to_string());
                row.push(format!("{:.6}", run.end_to_end.speedup));
                Ok(row)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut header = vec!["param", "value"];
        header.extend(TRAIN_HEADER);
        header.extend(["e2e_baseline_ms", "e2e_pipelined_ms", "e2e_speedup"]);
        (header, rows)
    } else if INFERENCE_PARAMS.contains(&param) {
        let rows = values
            .par_iter()
            .map(|v| -> Result<Vec<String>, CliError> {
                let (gen, cost) = match param {
                    "total_segments" | "frames_per_segment" => {
                        let n: u32 = v
                            .parse()
                            .map_err(|_| ConfigError::Usage(format!("sweep value {v:?} is not an integer")))?;
                        let mut gen = cfg.generation;
                        if param == "total_segments" {
                            gen.total_segments = n;
                        } else {
                            gen.frames_per_segment = n;
                        }
                        (gen, cfg.inference.clone())
                    }
                    _ => (cfg.generation, with_field(&cfg.inference, param, v)?),
                };
                let run = streaming_timeline_with(&gen, &cost, ctx.policy)?;
                Ok(vec![
                    param.to_string(),
                    v.clone(),
                    format!("{:.6}", run.fps),
                    format!("{:.6}", run.latency_s),
                    run.peak_mem_bytes.to_string(),
                    run.schedule.makespan_ms().to_string(),
                ])
            })
            .collect::<Result<Vec<_>, _>>()?;
        (
            vec!["param", "value", "fps", "latency_s", "peak_mem_bytes", "makespan_ms"],
            rows,
        )
    } else {
        return Err(ConfigError::Usage(format!("unknown sweep parameter {param:?}")).into());
    };

    ctx.write("metrics.csv", &csv_table(&header, &rows))?;
    let mut s = header_line(ctx, param, rows.len());
    if param == "ratio" {
        let best = rows
            .iter()
            .min_by_key(|r| r[8].parse::<i64>().unwrap_or(i64::MAX))
            .map(|r| r[0].clone());
        if let Some(best) = best {
            let _ = writeln!(s, "best_ratio={best}");
        }
    }
    ctx.write("summary.txt", &s)
}

fn header_line(ctx: &Ctx, param: &str, rows: usize) -> String {
    let mut s = header(ctx, "sweep");
    let _ = writeln!(s, "param={param}\nrows={rows}");
    s
}

fn validate_trace(path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (schedule, graph, groups) = from_chrome_trace(&text)?;
    check(&schedule, &graph, &groups)?;
    println!(
        "ok: {} entries, {} tasks, {} groups, makespan {} ms",
        schedule.entries.len(),
        graph.len(),
        groups.len(),
        schedule.makespan_ms()
    );
    Ok(())
}
