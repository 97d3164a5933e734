use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pnr_core::experiments::{simulate_records, ExperimentConfig};
use pnr_core::io::{encode_trace, read_trace};
use serde_json::Value;
use tempfile::TempDir;

const EPOCH: &str = "1700000000";

fn pnr(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pnr"));
    cmd.args(args).env("SOURCE_DATE_EPOCH", EPOCH).env_remove("PNR_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

fn simulate(dir: &Path, config: &Path, traces: usize) -> PathBuf {
    let out = dir.join("sim");
    ok(&pnr(
        &["simulate", "--config", s(config), "--traces", &traces.to_string(), "--out", s(&out)],
        &[],
    ));
    out
}

#[test]
fn simulated_trace_reads_back_losslessly() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "seed = 5\n[noise]\nsigma_mv = 0.4\n");
    let sim = simulate(dir.path(), &cfg, 1);
    let file = sim.join("traces/trace_000000.pnrt");
    let bytes = fs::read(&file).unwrap();
    let trace = read_trace(&file).unwrap();
    assert_eq!(encode_trace(&trace), bytes);

    let expected = simulate_records(
        &ExperimentConfig {
            seed: 5,
            ..ExperimentConfig::nominal()
        },
        1,
    )
    .unwrap();
    assert_eq!(trace, expected[0].trace);

    let manifest = json(&sim.join("manifest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["timestamp"], "2023-11-14T22:13:20Z");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn simulation_is_byte_identical_across_runs_and_threads() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[experiment]\nrandom_phase = true\n");
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        ok(&pnr(
            &["simulate", "--config", s(&cfg), "--seed", "11", "--traces", "40", "--out", s(&out)],
            &[("PNR_THREADS", threads)],
        ));
        out
    };
    let (a, b) = (run("a", "1"), run("b", "8"));
    for name in ["truth.csv", "manifest.json", "traces/trace_000000.pnrt", "traces/trace_000039.pnrt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    ok(&pnr(
        &["simulate", "--config", s(&cfg), "--seed", "12", "--traces", "40", "--out", s(&c)],
        &[],
    ));
    assert_ne!(
        fs::read(a.join("traces/trace_000000.pnrt")).unwrap(),
        fs::read(c.join("traces/trace_000000.pnrt")).unwrap()
    );
}

#[test]
fn rise_time_not_below_fall_time_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[pulse]\ntau_rise_ns = 30.0\ntau_fall_ns = 25.0\n");
    let out = pnr(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("o"))], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("pulse.tau_rise_ns") && err.contains("pulse.tau_fall_ns"), "{err}");
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let o = dir.path().join("o");
    let cfg = write_config(dir.path(), "c.toml", "[pulse]\ntau_rise = 0.2\n");
    let out = pnr(&["report", "--config", s(&cfg), "--out", s(&o)], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tau_rise"));

    let out = pnr(&["simulate", "--filter", "bandpass", "--out", s(&o)], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = pnr(&["simulate", "--out", s(&o)], &[("PNR_THREADS", "0")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("PNR_THREADS"));
}

const ANALYSIS_CONFIG: &str = "seed = 3\n[simulate]\ntraces = 3000\n";

#[test]
fn analysis_reports_every_component_and_jitter() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", ANALYSIS_CONFIG);
    let sim = simulate(dir.path(), &cfg, 3000);
    let out = dir.path().join("an");
    ok(&pnr(
        &[
            "analyze",
            "--config",
            s(&cfg),
            "--filter",
            "matched",
            "--ref-times",
            s(&sim.join("truth.csv")),
            "--out",
            s(&out),
            s(&sim.join("traces")),
        ],
        &[],
    ));
    let report = json(&out.join("report.json"));
    assert_eq!(report["fit"]["components"].as_array().unwrap().len(), 6);
    assert_eq!(report["spacings"].as_array().unwrap().len(), 5);
    assert_eq!(report["traces"], 3000);
    assert!(report["warnings"].as_array().unwrap().is_empty());
    // config, 3000 traces, reference times
    assert_eq!(report["manifest"]["inputs"].as_array().unwrap().len(), 3002);

    let pooled = &report["jitter"][0];
    assert!(pooled["n"].is_null());
    assert_eq!(pooled["count"], 3000);
    let jitter = pooled["jitter_s"].as_f64().unwrap();
    assert!(jitter > 0.0 && jitter < 100e-12, "{jitter}");

    // classification against the ground truth
    let truth: Vec<String> = fs::read_to_string(sim.join("truth.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().to_string())
        .collect();
    let assigned: Vec<String> = fs::read_to_string(out.join("events.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().to_string())
        .collect();
    assert_eq!(assigned.len(), 3000);
    let agree = truth.iter().zip(&assigned).filter(|(a, b)| a == b).count();
    assert!(agree as f64 / 3000.0 > 0.99, "{agree}");

    let fit = json(&out.join("fit.json"));
    assert_eq!(fit["spacings"], report["spacings"]);
    let hist = fs::read_to_string(out.join("histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 2001);
}

#[test]
fn rerun_from_manifest_reproduces_the_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", ANALYSIS_CONFIG);
    let sim = simulate(dir.path(), &cfg, 3000);
    let traces = sim.join("traces");
    let first = dir.path().join("first");
    ok(&pnr(
        &["analyze", "--config", s(&cfg), "--filter", "none", "--out", s(&first), s(&traces)],
        &[],
    ));
    let manifest = first.join("manifest.json");
    let rerun = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        ok(&pnr(
            &["analyze", "--manifest", s(&manifest), "--out", s(&out), s(&traces)],
            &[("PNR_THREADS", threads)],
        ));
        out
    };
    let (a, b) = (rerun("a", "1"), rerun("b", "8"));
    for name in ["report.json", "fit.json", "events.csv", "histogram.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let strip = |p: &Path| {
        let mut v = json(p);
        v.as_object_mut().unwrap().remove("manifest");
        v
    };
    assert_eq!(strip(&first.join("report.json")), strip(&a.join("report.json")));
    assert_eq!(json(&a.join("manifest.json"))["config"], json(&manifest)["config"]);
    assert_eq!(
        fs::read(first.join("events.csv")).unwrap(),
        fs::read(a.join("events.csv")).unwrap()
    );
}

#[test]
fn empty_directory_is_no_input() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = pnr(&["analyze", "--out", s(&dir.path().join("o")), s(&empty)], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("no input traces"), "{}", stderr(&out));
}

#[test]
fn corrupt_magic_is_bad_format_naming_the_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "");
    let sim = simulate(dir.path(), &cfg, 3);
    let victim = sim.join("traces/trace_000001.pnrt");
    let mut bytes = fs::read(&victim).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    fs::write(&victim, bytes).unwrap();
    let out = pnr(
        &["analyze", "--out", s(&dir.path().join("o")), s(&sim.join("traces"))],
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("trace_000001.pnrt") && err.contains("byte 0"), "{err}");
}

#[test]
fn truncated_trace_reports_byte_offset() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "");
    let sim = simulate(dir.path(), &cfg, 1);
    let victim = sim.join("traces/trace_000000.pnrt");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..100]).unwrap();
    let out = pnr(&["analyze", "--out", s(&dir.path().join("o")), s(&victim)], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("byte 100"), "{}", stderr(&out));
}

const SWEEP_CONFIG: &str = "\
[acquisition]
duration_ns = 1000.0
pulse_offset_ns = 500.0

[experiment]
trials = 6000
jitter_trials = 1000
";

#[test]
fn sweep_writes_one_row_per_cutoff_and_names_the_best() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SWEEP_CONFIG);
    let out = dir.path().join("sw");
    let run = pnr(
        &["sweep", "--config", s(&cfg), "--cutoffs", "log:1e6:1e9:20", "--out", s(&out)],
        &[],
    );
    ok(&run);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("cutoff_hz,s12,jitter_s"));
    assert_eq!(lines.count(), 20);

    let summary = json(&out.join("sweep.json"));
    let points = summary["points"].as_array().unwrap();
    assert_eq!(points.len(), 20);
    let best = summary["best_cutoff_hz"].as_f64().unwrap();
    let argmax = points
        .iter()
        .max_by(|a, b| a["s12"].as_f64().unwrap().total_cmp(&b["s12"].as_f64().unwrap()))
        .unwrap();
    assert_eq!(argmax["cutoff"].as_f64().unwrap(), best);
    assert!(summary["matched"]["s12"].as_f64().unwrap() > 0.0);
    assert!(String::from_utf8_lossy(&run.stdout).contains("best cutoff"));
}

#[test]
fn sweep_needs_three_cutoffs() {
    let dir = TempDir::new().unwrap();
    let out = pnr(
        &["sweep", "--cutoffs", "1e8", "--out", s(&dir.path().join("o"))],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("at least 3 cutoffs"));
}

#[test]
fn sweep_is_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SWEEP_CONFIG);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        ok(&pnr(
            &["sweep", "--config", s(&cfg), "--cutoffs", "1e7,5e7,2e8", "--out", s(&out)],
            &[("PNR_THREADS", threads)],
        ));
        out
    };
    let (a, b) = (run("a", "1"), run("b", "8"));
    for name in ["sweep.csv", "sweep.json", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn report_embeds_manifest_and_tables() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "[experiment]\ntrials = 6000\nsnr_trials = 500\njitter_trials = 1000\n",
    );
    let out = dir.path().join("r");
    ok(&pnr(&["report", "--config", s(&cfg), "--out", s(&out)], &[]));
    let r = json(&out.join("report.json"));
    assert_eq!(r["manifest"]["command"], "report");
    assert_eq!(r["snr"].as_array().unwrap().len(), 6);
    assert_eq!(r["filtered"]["spacings"].as_array().unwrap().len(), 5);
    assert!(r["max_array_size"].as_u64().unwrap() > 6);
}
