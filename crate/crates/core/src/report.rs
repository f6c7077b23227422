//! Report artifacts: SVG Gantt charts and CSV tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::graph::{TaskGraph, TaskKind};
use crate::sched::{gpu_ranges, Schedule, SimGroup, TraceMetrics};
use crate::stream::StreamTrace;
use crate::train::TrainRun;

const LABEL_WIDTH: f64 = 110.0;
const PLOT_WIDTH: f64 = 960.0;
const ROW_HEIGHT: f64 = 22.0;
const TOP: f64 = 28.0;

fn color(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::MicroPlan => "#4e79a7",
        TaskKind::PopulateA => "#59a14f",
        TaskKind::PopulateB => "#8cd17d",
        TaskKind::BoundaryReencode => "#b07aa1",
        TaskKind::Recon => "#9c755f",
        TaskKind::GuideRender => "#f1ce63",
        TaskKind::GenFwd => "#4e79a7",
        TaskKind::GenBwd => "#e15759",
        TaskKind::CriticTeacher => "#f28e2b",
        TaskKind::CriticTrain => "#76b7b2",
        TaskKind::Rollout => "#edc948",
        TaskKind::VaeChunk => "#ff9da7",
        TaskKind::SrChunk => "#bab0ac",
        TaskKind::Display => "#79706e",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One row per GPU plus a host row when host tasks exist, one rectangle per
/// entry and GPU, and a legend of the task kinds present.
pub fn gantt_svg(schedule: &Schedule, graph: &TaskGraph, groups: &[SimGroup], title: &str) -> String {
    let ranges = gpu_ranges(groups);
    let gpus = ranges.last().map_or(0, |r| r.end);
    let index = graph.index();
    let has_host = schedule.entries.iter().any(|e| e.gpus.is_empty());
    let rows = gpus + u32::from(has_host);
    let makespan = schedule.makespan_ms().max(1) as f64;
    let scale = PLOT_WIDTH / makespan;
    let kinds: BTreeSet<TaskKind> = schedule
        .entries
        .iter()
        .filter_map(|e| index.get(&e.task).map(|&i| graph.tasks[i].kind))
        .collect();
    let legend_y = TOP + f64::from(rows) * ROW_HEIGHT + 30.0;
    let width = LABEL_WIDTH + PLOT_WIDTH + 20.0;
    let height = legend_y + 20.0 * ((kinds.len() as f64) / 6.0).ceil() + 10.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" font-family="monospace" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="4" y="16" font-size="12">{} (makespan {} ms)</text>"#,
        escape(title),
        schedule.makespan_ms()
    );

    let row_y = |row: u32| TOP + f64::from(row) * ROW_HEIGHT;
    for (g, r) in groups.iter().zip(&ranges) {
        for gpu in r.clone() {
            let _ = writeln!(
                s,
                r#"<text x="4" y="{:.1}">{} gpu{}</text>"#,
                row_y(gpu) + 15.0,
                escape(&g.name),
                gpu
            );
        }
    }
    if has_host {
        let _ = writeln!(s, r#"<text x="4" y="{:.1}">host</text>"#, row_y(gpus) + 15.0);
    }
    let _ = writeln!(
        s,
        r##"<line x1="{LABEL_WIDTH}" y1="{TOP}" x2="{LABEL_WIDTH}" y2="{:.1}" stroke="#333"/>"##,
        row_y(rows)
    );

    for e in &schedule.entries {
        let Some(&i) = index.get(&e.task) else { continue };
        let t = &graph.tasks[i];
        let label = escape(&t.label());
        let x = LABEL_WIDTH + e.start_ms as f64 * scale;
        let w = ((e.end_ms - e.start_ms) as f64 * scale).max(1.0);
        let rows_of: Vec<u32> = if e.gpus.is_empty() { vec![gpus] } else { e.gpus.clone() };
        for row in rows_of {
            let y = row_y(row) + 2.0;
            let _ = writeln!(
                s,
                r##"<rect x="{x:.2}" y="{y:.1}" width="{w:.2}" height="{:.1}" fill="{}" stroke="#222" stroke-width="0.5"><title>{label} [{}, {}) ms</title></rect>"##,
                ROW_HEIGHT - 4.0,
                color(t.kind),
                e.start_ms,
                e.end_ms
            );
            if w >= 7.0 * label.len() as f64 {
                let _ = writeln!(s, r#"<text x="{:.2}" y="{:.1}">{label}</text>"#, x + 2.0, y + 12.0);
            }
        }
    }

    for (k, kind) in kinds.iter().enumerate() {
        let x = 4.0 + (k % 6) as f64 * 170.0;
        let y = legend_y + (k / 6) as f64 * 20.0;
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}" stroke="#222" stroke-width="0.5"/><text x="{:.1}" y="{:.1}">{}</text>"##,
            y - 10.0,
            color(*kind),
            x + 16.0,
            y,
            kind.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// One row per group: busy time, bubble ratio and the group's memory peak.
pub fn metrics_csv(m: &TraceMetrics, groups: &[SimGroup]) -> String {
    let ranges = gpu_ranges(groups);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "gpu_count", "makespan_ms", "busy_ms", "bubble_ratio", "peak_memory_bytes"])
        .expect("in-memory csv");
    for (g, r) in m.per_group.iter().zip(&ranges) {
        let peak = r
            .clone()
            .filter_map(|gpu| m.peak_memory_bytes.get(gpu as usize))
            .max()
            .copied()
            .unwrap_or(0);
        w.write_record([
            g.name.clone(),
            g.gpu_count.to_string(),
            m.makespan_ms.to_string(),
            g.busy_ms.to_string(),
            format!("{:.6}", g.bubble_ratio),
            peak.to_string(),
        ])
        .expect("in-memory csv");
    }
    finish(w)
}

pub const TRAIN_HEADER: [&str; 9] = [
    "m",
    "gf",
    "gb",
    "ct",
    "baseline_ms",
    "pipelined_ms",
    "speedup",
    "gen_bubble",
    "ct_bubble",
];

pub fn train_row(cost: &crate::train::TrainCostModel, run: &TrainRun) -> Vec<String> {
    vec![
        cost.gen_microbatches.to_string(),
        cost.gen_fwd_ms.to_string(),
        cost.gen_bwd_ms.to_string(),
        cost.ct_ms().to_string(),
        run.generator.baseline_ms.to_string(),
        run.generator.pipelined_ms.to_string(),
        format!("{:.6}", run.generator.speedup),
        format!("{:.6}", run.gen_bubble),
        format!("{:.6}", run.ct_bubble),
    ]
}

pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    finish(w)
}

pub fn chunks_csv(trace: &StreamTrace) -> String {
    let rows: Vec<Vec<String>> = trace
        .chunks
        .iter()
        .map(|c| {
            vec![
                c.chunk_id.to_string(),
                c.global_frame.to_string(),
                c.segment.to_string(),
                c.denoise_done_ms.to_string(),
                c.vae_done_ms.to_string(),
                c.sr_done_ms.to_string(),
                c.display_ms.to_string(),
            ]
        })
        .collect();
    csv_table(
        &[
            "chunk_id",
            "global_frame",
            "segment",
            "denoise_done_ms",
            "vae_done_ms",
            "sr_done_ms",
            "display_ms",
        ],
        &rows,
    )
}
