use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_worldpipe"));
    c.env_remove("WORLDPIPE_OUT");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().arg("--out").arg(out).args(args).output().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn scenarios_are_byte_deterministic() {
    let keys = fixture("keys.txt");
    let config = fixture("model-18b.toml");
    let config = config.to_str().unwrap();
    let scenarios: Vec<(Vec<&str>, Vec<&str>)> = vec![
        (vec!["--config", config, "plan"], vec!["graph.json", "trace.json", "metrics.csv", "gantt.svg", "summary.txt"]),
        (
            vec!["--config", config, "train-sim"],
            vec!["trace.json", "baseline_trace.json", "critic_trace.json", "metrics.csv", "gantt.svg", "memory.csv"],
        ),
        (vec!["--config", config, "infer-sim"], vec!["trace.json", "metrics.csv", "gantt.svg", "chunks.csv"]),
        (vec!["--config", config, "replay", "--keys", keys.to_str().unwrap()], vec!["poses.csv", "summary.txt"]),
        (vec!["sweep", "--param", "ratio", "--values", "compositions"], vec!["metrics.csv", "summary.txt"]),
    ];
    for (args, files) in scenarios {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [&a, &b] {
            let o = run(&args, dir.path());
            assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        }
        for f in files {
            assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{args:?} {f}");
        }
    }
}

#[test]
fn train_summary_and_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train-sim"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read(&dir.path().join("summary.txt"));
    assert!(summary.contains("speedup=1.75\n"), "{summary}");
    assert!(summary.contains("end_to_end_baseline_ms=36\n"));
    assert!(summary.contains("end_to_end_pipelined_ms=21\n"));
    assert_eq!(
        read(&dir.path().join("metrics.csv")),
        "m,gf,gb,ct,baseline_ms,pipelined_ms,speedup,gen_bubble,ct_bubble\n7,1,1,2,28,16,1.750000,0.125000,0.125000\n"
    );
}

#[test]
fn slotted_policy_shows_the_stable_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--policy", "slotted", "train-sim"], dir.path());
    assert!(o.status.success());
    let summary = read(&dir.path().join("summary.txt"));
    assert!(summary.contains("stable_phase=ok\n"), "{summary}");
    assert!(summary.contains("generator_pipelined_ms=16\n"));
}

#[test]
fn env_var_sets_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().env("WORLDPIPE_OUT", dir.path()).arg("train-sim").output().unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("trace.json").exists());
}

#[test]
fn written_traces_validate_and_corrupted_ones_do_not() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["train-sim"], dir.path()).status.success());
    for f in ["trace.json", "baseline_trace.json", "critic_trace.json"] {
        let o = bin().arg("validate").arg(dir.path().join(f)).output().unwrap();
        assert!(o.status.success(), "{f}: {}", stderr(&o));
    }
    let o = bin().arg("validate").arg(fixture("corrupted_trace.json")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("before dependency"), "{}", stderr(&o));

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "[{\"ph\":\"X\"}]").unwrap();
    let o = bin().arg("validate").arg(&garbage).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--param", "gen_microbatches", "--values", ""], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(&dir.path().join("metrics.csv"));
    assert_eq!(csv.lines().count(), 1);
    assert!(read(&dir.path().join("summary.txt")).contains("rows=0\n"));
}

#[test]
fn ratio_sweep_finds_four_one_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--param", "ratio", "--values", "compositions"], dir.path());
    assert!(o.status.success());
    assert!(read(&dir.path().join("summary.txt")).contains("best_ratio=4:1:1\n"));
    assert_eq!(read(&dir.path().join("metrics.csv")).lines().count(), 11);
}

#[test]
fn microbatch_sweep_rows_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--param", "gen_microbatches", "--values", "1,2,7"], dir.path());
    assert!(o.status.success());
    let csv = read(&dir.path().join("metrics.csv"));
    let values: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["1", "2", "7"]);
    assert!(csv.contains("gen_microbatches,7,7,1,1,2,28,16,1.750000"));
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[generation]\nframes_per_segment = 3\n").unwrap();
    let o = run(&["--config", bad.to_str().unwrap(), "plan"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("generation.frames_per_segment"), "{}", stderr(&o));

    std::fs::write(&bad, "[train]\nbogus = 1\n").unwrap();
    let o = run(&["--config", bad.to_str().unwrap(), "train-sim"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    assert_eq!(run(&["--config", "/nonexistent.toml", "plan"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["--policy", "fastest", "plan"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["--chain", "loop", "plan"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["sweep", "--param", "nope", "--values", "1"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn plan_summary_reports_depths() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--config", fixture("model-18b.toml").to_str().unwrap(), "--chain", "terminal", "plan"], dir.path());
    assert!(o.status.success());
    let s = read(&dir.path().join("summary.txt"));
    assert!(s.contains("chain=terminal\n"));
    assert!(s.contains("ar_depth=24\n"));
    assert!(s.contains("frame_ar_depth=217\n"), "{s}");
    let graph: serde_json::Value = serde_json::from_str(&read(&dir.path().join("graph.json"))).unwrap();
    assert!(graph["tasks"].as_array().unwrap().len() > 24 * 4);
}

#[test]
fn infer_summary_for_both_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--config", fixture("model-18b.toml").to_str().unwrap(), "infer-sim"], dir.path());
    assert!(o.status.success());
    let s = read(&dir.path().join("summary.txt"));
    assert!(s.contains("fps=8.0\n"), "{s}");
    assert!(s.contains("plan_overlaps_population=true\n"));
    let chunks = read(&dir.path().join("chunks.csv"));
    assert!(chunks.starts_with("chunk_id,global_frame,segment,denoise_done_ms,vae_done_ms,sr_done_ms,display_ms\n"));
}
