use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sftbloom_cli::commands::{cmd_lab, cmd_report, cmd_sim, cmd_sweep, Manifest, CellStatus, SUMMARY_FILE};
use sftbloom_cli::config::{parse_value, resolve, AppConfig, ConfigSources};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn config(out: &Path, pairs: &[(&str, &str)]) -> anyhow::Result<AppConfig> {
    let mut flags: toml::Table = pairs.iter().map(|(k, v)| (k.to_string(), parse_value(v))).collect();
    flags.insert("out".into(), out.to_str().unwrap().into());
    resolve(&ConfigSources {
        flags,
        ..Default::default()
    })
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

const HAND: [(&str, &str); 3] = [("capacity", "2"), ("rti_s", "0"), ("idle_timeout_s", "inf")];

fn small_synthetic(extra: &[(&'static str, &'static str)]) -> Vec<(&'static str, &'static str)> {
    let mut v = vec![("synth_flows", "80"), ("synth_packets", "4000"), ("synth_duration_s", "60"), ("capacity", "8")];
    v.extend_from_slice(extra);
    v
}

#[test]
fn lab_writes_one_csv_per_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[("trials", "2")]).unwrap();
    let written = cmd_lab(&cfg).unwrap();
    let names: Vec<String> = written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["lab_A.csv", "lab_B.csv", "lab_C.csv", "lab_D.csv"]);
    let a = fs::read_to_string(dir.path().join("lab_A.csv")).unwrap();
    assert!(a.contains("A,55,0.3,138,2"), "{a}");
}

#[test]
fn empty_fp_rates_fail_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lab");
    let err = config(&out, &[("fp_rates", "[]")]).and_then(|c| cmd_lab(&c)).unwrap_err();
    assert!(format!("{err:#}").contains("fp_rates"), "{err:#}");
    assert!(!out.exists());
}

#[test]
fn lab_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = [("trials", "4"), ("experiments", "[\"B\", \"D\"]"), ("lab_per_trial", "true")];
    let a = cmd_lab(&config(&dir.path().join("a"), &pairs).unwrap()).unwrap();
    let b = cmd_lab(&config(&dir.path().join("b"), &pairs).unwrap()).unwrap();
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(read(x), read(y), "{}", x.display());
    }
}

#[test]
fn lab_over_a_tiny_trace_rejects_oversized_windows() {
    let dir = tempfile::tempdir().unwrap();
    let trace = fixture("hand_trace.csv");
    // Three flows cannot hold a 30-flow window.
    let pairs = [("trace", trace.to_str().unwrap()), ("experiments", "[\"C\"]"), ("trials", "1")];
    assert!(config(dir.path(), &pairs).and_then(|c| cmd_lab(&c)).is_err());
}

#[test]
fn hand_trace_under_lru_misses_four_times() {
    let dir = tempfile::tempdir().unwrap();
    let trace = fixture("hand_trace.csv");
    let mut pairs = HAND.to_vec();
    pairs.extend([("trace", trace.to_str().unwrap()), ("policy", "LRU")]);
    let s = cmd_sim(&config(dir.path(), &pairs).unwrap()).unwrap();
    assert_eq!((s.misses, s.hits), (4, 2));
    assert_eq!(s.optimal_misses, Some(4));
    let on_disk: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk["config"]["policy"], "LRU");
    assert_eq!(on_disk["seed"], 101);
}

#[test]
fn optimal_is_zero_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_sim(&config(dir.path(), &small_synthetic(&[("policy", "OPTIMAL")])).unwrap()).unwrap();
    assert_eq!(s.normalized_miss_rate, Some(0.0));
    assert_eq!(s.optimal_misses, Some(s.misses));
}

#[test]
fn agent_policy_needs_agent_settings() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_sim(&config(dir.path(), &[("policy", "DQN_LRU")]).unwrap()).unwrap_err();
    assert!(err.to_string().contains("learning_rate"), "{err}");
    assert!(!dir.path().join(SUMMARY_FILE).exists());
}

#[test]
fn agent_sim_is_reproducible_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("net.sftq");
    let pairs = small_synthetic(&[
        ("policy", "DQN_LFU"),
        ("learning_rate", "0.001"),
        ("gamma", "0.9"),
        ("hidden_layers", "\"16_16\""),
        ("eti_multiple", "10"),
        ("warmup", "16"),
        ("batch_size", "8"),
    ]);
    let mut a = config(&dir.path().join("a"), &pairs).unwrap();
    a.checkpoint_out = Some(ckpt.clone());
    let sa = cmd_sim(&a).unwrap();
    let b = config(&dir.path().join("b"), &pairs).unwrap();
    cmd_sim(&b).unwrap();
    assert!(sa.eti_decisions > 0);
    for f in ["timeseries.csv", "decisions.csv", SUMMARY_FILE] {
        assert_eq!(read(&dir.path().join("a").join(f)), read(&dir.path().join("b").join(f)), "{f}");
    }
    let mut c = config(&dir.path().join("c"), &pairs).unwrap();
    c.checkpoint_in = Some(ckpt);
    cmd_sim(&c).unwrap();
    let mut wrong = config(&dir.path().join("d"), &pairs).unwrap();
    wrong.checkpoint_in = c.checkpoint_in.clone();
    wrong.capacity = sftbloom_cli::config::Axis::one(4);
    assert!(cmd_sim(&wrong).is_err(), "state width mismatch must be rejected");
}

#[test]
fn sweep_runs_the_grid_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &small_synthetic(&[("policy", "[\"LRU\", \"LFU\"]"), ("seed", "[101, 103, 107]")])).unwrap();
    let first = cmd_sweep(&cfg).unwrap();
    assert_eq!((first.total, first.completed, first.skipped, first.failed), (6, 6, 0, 0));
    let manifest = Manifest::load(&dir.path().join("manifest.json")).unwrap().unwrap();
    assert!(manifest.cells.iter().all(|e| e.status == CellStatus::Done));

    // Simulate an interruption: one cell lost its summary.
    let victim = dir.path().join("cells").join(&manifest.cells[2].id).join(SUMMARY_FILE);
    fs::remove_file(&victim).unwrap();
    let second = cmd_sweep(&cfg).unwrap();
    assert_eq!((second.completed, second.skipped), (1, 5));
    assert!(second.all_done() && victim.exists());

    let report = cmd_report(dir.path()).unwrap();
    assert_eq!(report.runs, 6);
    assert_eq!(report.csv.lines().count(), 3, "{}", report.csv);
}

#[test]
fn sweep_results_do_not_depend_on_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = small_synthetic(&[("policy", "[\"LRU\", \"OPTIMAL\"]"), ("capacity", "[4, 8]")]);
    let mut one = config(&dir.path().join("one"), &pairs).unwrap();
    one.jobs = Some(1);
    let mut four = config(&dir.path().join("four"), &pairs).unwrap();
    four.jobs = Some(4);
    cmd_sweep(&one).unwrap();
    cmd_sweep(&four).unwrap();
    assert_eq!(cmd_report(&one.out).unwrap().csv, cmd_report(&four.out).unwrap().csv);
}

#[test]
fn report_handles_empty_single_and_mixed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cmd_report(dir.path()).is_err(), "empty directory");

    let trace = fixture("hand_trace.csv");
    let mut pairs = HAND.to_vec();
    pairs.extend([("trace", trace.to_str().unwrap()), ("policy", "LRU")]);
    let s = cmd_sim(&config(&dir.path().join("lru"), &pairs).unwrap()).unwrap();
    let single = cmd_report(dir.path()).unwrap();
    let rows: Vec<&str> = single.csv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with(&format!("LRU,hand_trace,1,{},0,", s.miss_rate)), "{}", rows[1]);

    let last = pairs.len() - 1;
    pairs[last] = ("policy", "LFU");
    cmd_sim(&config(&dir.path().join("lfu"), &pairs).unwrap()).unwrap();
    cmd_sim(&config(&dir.path().join("syn"), &small_synthetic(&[("policy", "LFU")])).unwrap()).unwrap();
    fs::create_dir_all(dir.path().join("bad")).unwrap();
    fs::write(dir.path().join("bad").join(SUMMARY_FILE), "{ not json").unwrap();
    let mixed = cmd_report(dir.path()).unwrap();
    let groups: Vec<&str> = mixed.csv.lines().skip(1).map(|l| l.rsplitn(10, ',').last().unwrap()).collect();
    assert_eq!(groups, ["LFU,hand_trace", "LFU,synthetic", "LRU,hand_trace"]);
    assert_eq!(mixed.corrupt.len(), 1);
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sftbloom"));
    c.env("SFTBLOOM_LOG", "warn");
    c
}

#[test]
fn binary_flags_env_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let sim = bin()
        .args(["sim", "--policy", "LRU", "--trace"])
        .arg(fixture("hand_trace.csv"))
        .arg("--out")
        .arg(&out)
        .args(["--set", "rti_s=0", "--set", "idle_timeout_s=inf"])
        .env("SFTBLOOM_CAPACITY", "2")
        .output()
        .unwrap();
    assert!(sim.status.success());
    assert_eq!(String::from_utf8_lossy(&sim.stdout).trim(), out.join(SUMMARY_FILE).display().to_string());
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(s["misses"], 4);

    let bad = bin().args(["sim", "--set", "capacty=3"]).arg("--out").arg(dir.path()).status().unwrap();
    assert!(!bad.success());

    // A corrupt summary still yields a report but a failing exit code.
    fs::create_dir_all(dir.path().join("bad")).unwrap();
    fs::write(dir.path().join("bad").join(SUMMARY_FILE), "[]").unwrap();
    let report = bin().arg("report").arg(dir.path()).output().unwrap();
    assert!(!report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("LRU,hand_trace,1,"));

    let cfg_file = dir.path().join("sweep.toml");
    fs::write(
        &cfg_file,
        "policy = [\"LRU\", \"DQN_LRU\"]\nsynth_flows = 40\nsynth_packets = 500\nsynth_duration_s = 10.0\ncapacity = 4\n",
    )
    .unwrap();
    // The agent cell lacks its settings: the whole grid is rejected up front.
    let sweep = bin().arg("--config").arg(&cfg_file).arg("sweep").arg("--out").arg(dir.path().join("sw")).status().unwrap();
    assert_eq!(sweep.code(), Some(2));
    assert!(!dir.path().join("sw").join("manifest.json").exists());

    let ok = bin()
        .arg("--config")
        .arg(&cfg_file)
        .args(["sweep", "--policy", "LRU", "--policy", "LFU", "--seed", "1", "--seed", "2", "--jobs", "2"])
        .arg("--out")
        .arg(dir.path().join("sw"))
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));
    let manifest = Manifest::load(&dir.path().join("sw").join("manifest.json")).unwrap().unwrap();
    assert_eq!(manifest.cells.len(), 4);
    assert!(manifest.cells.iter().all(|e| e.status == CellStatus::Done));
}
