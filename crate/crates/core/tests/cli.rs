use std::fs;
use std::path::Path;
use std::process::Command;

use systolic_vit::cli::{
    cmd_analyze, cmd_func, cmd_sim, cmd_sweep, cmd_verify, load_model, parse_axes, tensorfile, RunConfig,
    SWEEP_HEADER,
};
use systolic_vit::sim::{CycleTrace, EventKind};
use systolic_vit::Error;

fn config(dir: &Path, extra: &str) -> RunConfig {
    RunConfig::parse(&format!("out_dir = {}\n{extra}", dir.display())).unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn func_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = cmd_func(&config(a.path(), "seed = 17")).unwrap();
    let sb = cmd_func(&config(b.path(), "seed = 17")).unwrap();
    assert_eq!(sa, sb);
    let fa = read_dir_bytes(a.path());
    assert_eq!(fa, read_dir_bytes(b.path()));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["func_summary.txt", "head0_sa.qt", "head1_sa.qt", "head2_sa.qt", "msa_out.csv"]);
}

#[test]
fn deit_small_func_emits_six_heads() {
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_func(&config(dir.path(), "preset = deit-s")).unwrap();
    assert_eq!(s.get("heads"), Some("6"));
    for h in 0..6 {
        let t = tensorfile::read(&dir.path().join(format!("head{h}_sa.qt"))).unwrap();
        assert_eq!((t.rows, t.cols, t.bits), (198, 64, 3));
    }
    assert!(!dir.path().join("head6_sa.qt").exists());
}

#[test]
fn corrupt_input_file_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let path = dir.path().join("z.qt");
    let mut bytes = tensorfile::encode(&load_model(&cfg).unwrap().z3b);
    bytes[5] = 9;
    fs::write(&path, &bytes).unwrap();
    let cfg = config(dir.path(), &format!("input = {}", path.display()));
    match cmd_func(&cfg) {
        Err(Error::Parse { field, .. }) => assert_eq!(field, "signedness"),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn explicit_input_file_matches_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = config(&dir.path().join("a"), "seed = 3");
    let path = dir.path().join("z.qt");
    tensorfile::write(&path, &load_model(&base).unwrap().z3b).unwrap();
    let with_file = config(&dir.path().join("b"), &format!("seed = 3\ninput = {}", path.display()));
    let a = cmd_func(&base).unwrap();
    let b = cmd_func(&with_file).unwrap();
    // the file carries codes only, so the residual uses dequantized inputs
    assert_eq!(a.get("heads"), b.get("heads"));
    for h in 0..3 {
        let name = format!("head{h}_sa.qt");
        assert_eq!(
            fs::read(dir.path().join("a").join(&name)).unwrap(),
            fs::read(dir.path().join("b").join(&name)).unwrap()
        );
    }
}

#[test]
fn sim_trace_is_monotone_and_matches_analytics() {
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_sim(&config(dir.path(), "mul_cycles = 2")).unwrap();
    let log = fs::read_to_string(dir.path().join("trace.log")).unwrap();
    let trace = CycleTrace::from_log(&log).unwrap();
    trace.validate().unwrap();
    assert!(trace.events.windows(2).all(|w| w[0].cycle <= w[1].cycle));
    assert!(trace.find("head2", EventKind::OutputFirst).is_some());
    for key in ["sa_latency_cycles", "pitch_cycles", "msa_latency_cycles"] {
        assert_eq!(s.get(key), s.get(&format!("analytic_{key}")), "{key}");
    }
}

#[test]
fn deit_small_analyze_lists_11425() {
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_analyze(&config(dir.path(), "preset = deit-s")).unwrap();
    assert_eq!(s.get("msa_latency_cycles"), Some("11425"));
    assert_eq!(s.get("msa_latency_us"), Some("28.56"));
    let text = fs::read_to_string(dir.path().join("analyze_summary.txt")).unwrap();
    assert!(text.contains("msa_latency_cycles=11425\n"));
}

#[test]
fn verify_passes_and_catches_delay_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let ok = cmd_verify(&cfg, None).unwrap();
    assert!(ok.passed(), "{}", ok.to_text());
    assert!(ok.checks.iter().any(|c| c.name == "dsp_vs_dsp_free" && c.passed));
    let bad = cmd_verify(&cfg, Some(3)).unwrap();
    assert!(!bad.passed());
    let c = bad.checks.iter().find(|c| c.name == "golden_vs_sim").unwrap();
    assert!(c.detail.contains("alignment violation at post-aggregation unit 3"), "{}", c.detail);
}

#[test]
fn sweep_over_nu_improves_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let csv = cmd_sweep(&config(dir.path(), ""), &parse_axes("nu_exp=2..10").unwrap()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SWEEP_HEADER));
    let err: Vec<f64> = lines.map(|l| l.split(',').nth(7).unwrap().parse().unwrap()).collect();
    assert_eq!(err.len(), 9);
    assert!(err.windows(2).all(|w| w[1] <= w[0] * 1.10), "{err:?}");
    assert!(err[8] < err[0] / 2.0, "{err:?}");
}

#[test]
fn single_point_sweep_equals_func() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "seed = 5");
    let csv = cmd_sweep(&cfg, &[]).unwrap();
    let f = cmd_func(&cfg).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(Some(row[5]), f.get("max_abs_error"));
    assert_eq!(Some(row[6]), f.get("mean_abs_error"));
    assert_eq!(Some(row[7]), f.get("welford_error"));
}

#[test]
fn bus_sweep_plateaus_at_582() {
    let dir = tempfile::tempdir().unwrap();
    let axes = parse_axes("bus_bits=32,64,128,256,1024,inf").unwrap();
    let csv = cmd_sweep(&config(dir.path(), "preset = deit-s"), &axes).unwrap();
    let pitches: Vec<u64> = csv.lines().skip(1).map(|l| l.split(',').nth(9).unwrap().parse().unwrap()).collect();
    assert_eq!(pitches, [1188, 594, 582, 582, 582, 582]);
}

#[test]
fn sweep_is_deterministic_and_sorted() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let axes = parse_axes("MUL=4,1,2;H=3,1").unwrap();
    let x = cmd_sweep(&config(a.path(), ""), &axes).unwrap();
    let y = cmd_sweep(&config(b.path(), ""), &axes).unwrap();
    assert_eq!(x, y);
    let keys: Vec<(u64, u64)> = x
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[3].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect();
    assert_eq!(keys, [(1, 1), (1, 2), (1, 4), (3, 1), (3, 2), (3, 4)]);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_systolic-vit"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let code = |args: &[&str]| bin().args(args).output().unwrap().status.code();
    assert_eq!(code(&["verify", "--out", &out]), Some(0));
    assert_eq!(code(&["verify", "--out", &out, "--inject-delay-fault", "1"]), Some(1));
    assert_eq!(code(&["func", "--preset", "nope", "--out", &out]), Some(2));
    assert_eq!(code(&["func", "--config", "/nonexistent/run.cfg"]), Some(3));

    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("mode = analyze\npreset = toy\nout_dir = {out}\n")).unwrap();
    let o = bin().args(["--config", cfg.to_str().unwrap(), "--preset", "deit-s"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("msa_latency_cycles=11425"));
}
