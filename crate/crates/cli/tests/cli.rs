//! End-to-end tests for the `cropchain` binary: exit codes, flag surface,
//! artifact layout, run manifests, byte-level reproducibility, and the
//! ledger/mission round trip. Everything runs against a real subprocess
//! via `CARGO_BIN_EXE_cropchain`; heavyweight fixtures (a trained base
//! checkpoint plus a small roadmap) are built once and shared.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cropchain"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to spawn cropchain")
}

fn assert_ok(out: &Output, label: &str) {
    assert!(
        out.status.success(),
        "{label} failed (status {:?})\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&read(path))
        .unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
}

/// Shared expensive assets: one tiny training run and one small roadmap.
struct Fixture {
    _dir: TempDir,
    root: PathBuf,
}

impl Fixture {
    fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }
    fn checkpoint(&self) -> PathBuf {
        self.train_dir().join("base.ckpt")
    }
    fn roadmap_dir(&self) -> PathBuf {
        self.root.join("roadmap")
    }
    fn roadmap_json(&self) -> PathBuf {
        self.roadmap_dir().join("roadmap.json")
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = TempDir::new().expect("tempdir");
        let root = dir.path().to_path_buf();
        let out = run(bin().args([
            "train",
            "--seed", "5",
            "--count", "4",
            "--size", "16",
            "--epochs", "2",
            "--lr", "0.3",
            "--batch", "2",
            "--eval-count", "4",
            "--out-dir",
        ])
        .arg(root.join("train")));
        assert_ok(&out, "fixture train");
        let out = run(bin()
            .args(["roadmap", "--checkpoint"])
            .arg(root.join("train/base.ckpt"))
            .args([
                "--itrs", "1",
                "--ps", "0.3,0.6",
                "--ft-epochs", "1",
                "--seed", "5",
                "--count", "4",
                "--size", "16",
                "--lr", "0.1",
                "--batch", "2",
                "--eval-count", "4",
                "--out-dir",
            ])
            .arg(root.join("roadmap")));
        assert_ok(&out, "fixture roadmap");
        Fixture { _dir: dir, root }
    })
}

// ---------------------------------------------------------------- exit codes

#[test]
fn no_args_prints_usage_and_exits_one() {
    let out = run(&mut bin());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("Usage"), "expected usage text, got:\n{err}");
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = run(bin().arg(flag));
        assert_eq!(out.status.code(), Some(0), "{flag} should exit 0");
    }
    for sub in ["train", "prune", "roadmap", "select", "simulate", "ledger"] {
        let out = run(bin().args([sub, "--help"]));
        assert_eq!(out.status.code(), Some(0), "{sub} --help should exit 0");
    }
}

#[test]
fn unknown_subcommand_and_flag_exit_one() {
    let out = run(bin().arg("harvest"));
    assert_eq!(out.status.code(), Some(1));
    let out = run(bin().args(["select", "--roadmap", "x.json", "--max-bananas", "3"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--max-bananas"));
}

#[test]
fn help_text_lists_every_flag() {
    let expected: &[(&[&str], &[&str])] = &[
        (
            &["train"],
            &[
                "--seed", "--count", "--size", "--epochs", "--lr", "--batch",
                "--covers", "--eval-seed", "--eval-count", "--save-fields", "--out-dir",
            ],
        ),
        (
            &["prune"],
            &[
                "--checkpoint", "--ratio", "--iterations", "--ft-epochs", "--layers",
                "--seed", "--count", "--size", "--lr", "--batch", "--covers",
                "--eval-seed", "--eval-count", "--out-dir",
            ],
        ),
        (
            &["roadmap"],
            &[
                "--checkpoint", "--itrs", "--ps", "--ft-epochs", "--layers", "--seed",
                "--count", "--size", "--lr", "--batch", "--covers", "--eval-seed",
                "--eval-count", "--measure-latency", "--latency-reps", "--out-dir",
            ],
        ),
        (
            &["select"],
            &[
                "--roadmap", "--max-flops", "--max-size-mb", "--max-energy-j",
                "--max-latency-ms", "--min-accuracy",
            ],
        ),
        (
            &["simulate"],
            &[
                "--config", "--roadmap", "--model-dir", "--chain", "--chain-out",
                "--contract-config", "--out-dir",
            ],
        ),
        (&["ledger", "init"], &["--chain"]),
        (
            &["ledger", "register-farmer"],
            &["--chain", "--id", "--crop", "--lat", "--lon", "--yield-t", "--timestamp"],
        ),
        (&["ledger", "register-plant"], &["--chain", "--id", "--product"]),
        (
            &["ledger", "trade"],
            &["--chain", "--seller", "--buyer", "--quantity-t", "--product"],
        ),
        (&["ledger", "report-biomass"], &["--chain", "--field", "--fraction"]),
        (
            &["ledger", "report-output"],
            &["--chain", "--plant", "--product", "--quantity-t"],
        ),
        (&["ledger", "audit"], &["--chain", "--flags-out"]),
        (&["ledger", "verify"], &["--chain"]),
        (
            &["ledger", "scenario"],
            &[
                "--seed", "--farmers", "--plants", "--events",
                "--biomass-violations", "--output-violations", "--out-dir",
            ],
        ),
    ];
    for (path, flags) in expected {
        let out = run(bin().args(path.iter().copied()).arg("--help"));
        assert_eq!(out.status.code(), Some(0), "{path:?} --help");
        let text = stdout(&out);
        for flag in *flags {
            assert!(text.contains(flag), "{path:?} --help is missing {flag}:\n{text}");
        }
    }
}

// -------------------------------------------------------------------- train

#[test]
fn train_writes_artifacts_and_manifest() {
    let dir = fixture().train_dir();
    for name in ["base.ckpt", "loss.csv", "dataset.json", "metrics.json", "run_manifest.json"] {
        assert!(dir.join(name).exists(), "missing {name} in train output");
    }

    let manifest = json(&dir.join("run_manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["code_version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["duration_seconds"].as_f64().unwrap() >= 0.0);
    let outputs: Vec<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert!(outputs.iter().any(|o| o.ends_with("loss.csv")), "outputs: {outputs:?}");
    assert!(outputs.iter().any(|o| o.ends_with("base.ckpt")), "outputs: {outputs:?}");

    let metrics = json(&dir.join("metrics.json"));
    let acc = metrics["eval_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc), "eval_accuracy out of range: {acc}");
    let iou = metrics["eval_mean_iou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&iou), "eval_mean_iou out of range: {iou}");

    let dataset = json(&dir.join("dataset.json"));
    assert_eq!(dataset["entries"].as_array().unwrap().len(), 4);

    let loss = read(&dir.join("loss.csv"));
    assert!(loss.starts_with("epoch,loss\n"));
    assert_eq!(loss.lines().count(), 3, "header + 2 epochs");
}

#[test]
fn train_same_seed_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let mut runs = Vec::new();
    for (name, seed) in [("a", "9"), ("b", "9"), ("c", "10")] {
        let out_dir = dir.path().join(name);
        let out = run(bin()
            .args([
                "train", "--seed", seed, "--count", "3", "--size", "16", "--epochs", "2",
                "--batch", "2", "--eval-count", "2", "--out-dir",
            ])
            .arg(&out_dir));
        assert_ok(&out, "train");
        runs.push(read(&out_dir.join("loss.csv")));
    }
    assert_eq!(runs[0], runs[1], "same seed must reproduce loss.csv exactly");
    assert_ne!(runs[0], runs[2], "different seed should change the loss curve");
}

#[test]
fn train_rejects_bad_size() {
    let out = run(bin().args(["train", "--size", "20", "--epochs", "1"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--size"), "stderr: {}", stderr(&out));
}

#[test]
fn out_dir_env_reroots_relative_paths() {
    let dir = TempDir::new().unwrap();
    let reroot = dir.path().join("rerooted");
    let out = run(bin()
        .args([
            "train", "--seed", "3", "--count", "2", "--size", "16", "--epochs", "1",
            "--batch", "2", "--eval-count", "2", "--out-dir", "nested/run",
        ])
        .env("CROPCHAIN_OUT_DIR", &reroot)
        .current_dir(dir.path()));
    assert_ok(&out, "train with CROPCHAIN_OUT_DIR");
    assert!(reroot.join("nested/run/metrics.json").exists());
    assert!(!dir.path().join("nested").exists(), "relative path must not be used directly");

    // Absolute --out-dir wins over the environment override.
    let absolute = dir.path().join("absolute");
    let out = run(bin()
        .args([
            "train", "--seed", "3", "--count", "2", "--size", "16", "--epochs", "1",
            "--batch", "2", "--eval-count", "2", "--out-dir",
        ])
        .arg(&absolute)
        .env("CROPCHAIN_OUT_DIR", &reroot)
        .current_dir(dir.path()));
    assert_ok(&out, "train with absolute out dir");
    assert!(absolute.join("metrics.json").exists());
}

// -------------------------------------------------------------------- prune

#[test]
fn prune_round_trip_and_validation() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("pruned");
    let out = run(bin()
        .args(["prune", "--checkpoint"])
        .arg(fx.checkpoint())
        .args([
            "--ratio", "0.4", "--iterations", "2", "--ft-epochs", "1", "--seed", "5",
            "--count", "4", "--size", "16", "--batch", "2", "--eval-count", "4", "--out-dir",
        ])
        .arg(&out_dir));
    assert_ok(&out, "prune");
    assert!(out_dir.join("pruned.ckpt").exists());
    let record = json(&out_dir.join("prune_record.json"));
    let stages = record.as_array().unwrap();
    assert_eq!(stages.len(), 2, "one record per iteration");
    for stage in stages {
        let acc = stage["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(stage["profile"]["flops"].as_u64().unwrap() > 0);
    }

    let out = run(bin()
        .args(["prune", "--checkpoint"])
        .arg(fx.checkpoint())
        .args(["--ratio", "1.1", "--out-dir"])
        .arg(dir.path().join("bad")));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--ratio"), "stderr: {}", stderr(&out));

    let out = run(bin().args([
        "prune", "--checkpoint", "no-such-file.ckpt", "--ratio", "0.2",
    ]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--checkpoint"), "stderr: {}", stderr(&out));
}

// ------------------------------------------------------------------ roadmap

#[test]
fn roadmap_artifacts_and_determinism() {
    let fx = fixture();
    let dir = fx.roadmap_dir();
    let entries = json(&fx.roadmap_json());
    let entries = entries.as_array().unwrap();
    assert_eq!(entries.len(), 3, "base + itr1 at two ratios");
    let ids: Vec<&str> = entries.iter().map(|e| e["variant_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["base", "itr1_p0.3", "itr1_p0.6"]);
    for entry in entries {
        let rel = entry["checkpoint_path"].as_str().unwrap();
        assert!(dir.join(rel).exists(), "missing checkpoint {rel}");
    }

    let csv = read(&dir.join("roadmap.csv"));
    assert!(csv.starts_with("itr,p,accuracy,flops,size_mb,energy_j,latency_ms\n"));
    assert_eq!(csv.lines().count(), 4);

    let surgery = json(&dir.join("surgery_records.json"));
    assert_eq!(surgery.as_object().unwrap().len(), 2, "one surgery record per pruned variant");

    // Byte-for-byte reproducible from the same checkpoint and flags.
    let rerun = TempDir::new().unwrap();
    let out = run(bin()
        .args(["roadmap", "--checkpoint"])
        .arg(fx.checkpoint())
        .args([
            "--itrs", "1", "--ps", "0.3,0.6", "--ft-epochs", "1", "--seed", "5",
            "--count", "4", "--size", "16", "--lr", "0.1", "--batch", "2",
            "--eval-count", "4", "--out-dir",
        ])
        .arg(rerun.path().join("again")));
    assert_ok(&out, "roadmap rerun");
    assert_eq!(
        read(&dir.join("roadmap.csv")),
        read(&rerun.path().join("again/roadmap.csv")),
        "same flags must reproduce roadmap.csv exactly"
    );
}

#[test]
fn roadmap_rejects_malformed_ratio_range() {
    let fx = fixture();
    let out = run(bin()
        .args(["roadmap", "--checkpoint"])
        .arg(fx.checkpoint())
        .args(["--itrs", "1", "--ps", "0.9:0.1:0.1"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--ps"), "stderr: {}", stderr(&out));
}

// ------------------------------------------------------------------- select

#[test]
fn select_feasible_infeasible_and_missing_budget() {
    let fx = fixture();
    let out = run(bin()
        .args(["select", "--roadmap"])
        .arg(fx.roadmap_json())
        .args(["--max-flops", "999999999999"]));
    assert_ok(&out, "select feasible");
    let text = stdout(&out);
    let first = text.lines().next().unwrap_or_default();
    assert!(
        ["base", "itr1_p0.3", "itr1_p0.6"].contains(&first),
        "unexpected pick: {first}"
    );
    assert!(text.contains("variant_id"), "entry JSON should follow the id");

    let out = run(bin()
        .args(["select", "--roadmap"])
        .arg(fx.roadmap_json())
        .args(["--min-accuracy", "2.0"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("NoFeasibleModel"), "stderr: {}", stderr(&out));

    let out = run(bin().args(["select", "--roadmap"]).arg(fx.roadmap_json()));
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("--max-flops") && err.contains("--min-accuracy"), "stderr: {err}");

    let dir = TempDir::new().unwrap();
    let bogus = dir.path().join("not-a-roadmap.json");
    std::fs::write(&bogus, "{\"oops\": true}").unwrap();
    let out = run(bin().args(["select", "--roadmap"]).arg(&bogus).args(["--max-flops", "1"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--roadmap"), "stderr: {}", stderr(&out));
}

// ------------------------------------------------------------------- ledger

#[test]
fn ledger_end_to_end_with_tamper_detection() {
    let dir = TempDir::new().unwrap();
    let chain = dir.path().join("chain.jsonl");
    let chain_s = chain.to_str().unwrap();

    let out = run(bin().args(["ledger", "init", "--chain", chain_s]));
    assert_ok(&out, "init");
    let out = run(bin().args(["ledger", "init", "--chain", chain_s]));
    assert_eq!(out.status.code(), Some(1), "re-init over an existing chain must fail");

    let out = run(bin().args([
        "ledger", "register-farmer", "--chain", chain_s, "--id", "farm-1",
        "--crop", "sugarcane", "--lat", "6.9", "--lon", "79.8", "--yield-t", "12",
    ]));
    assert_ok(&out, "register-farmer");
    assert!(stdout(&out).contains("chain address"));

    let out = run(bin().args([
        "ledger", "register-plant", "--chain", chain_s, "--id", "mill-1",
        "--product", "sugarcane",
    ]));
    assert_ok(&out, "register-plant");

    let out = run(bin().args([
        "ledger", "report-biomass", "--chain", chain_s, "--field", "farm-1",
        "--fraction", "0.5", "--timestamp", "1",
    ]));
    assert_ok(&out, "report-biomass");
    assert!(stdout(&out).contains("ok"), "first reading is a baseline: {}", stdout(&out));
    assert!(stdout(&out).contains("us)"), "execution time should be reported in microseconds");

    let out = run(bin().args([
        "ledger", "trade", "--chain", chain_s, "--seller", "farm-1", "--buyer", "mill-1",
        "--quantity-t", "2.25", "--product", "sugarcane", "--timestamp", "2",
    ]));
    assert_ok(&out, "trade");

    let out = run(bin().args([
        "ledger", "report-output", "--chain", chain_s, "--plant", "mill-1",
        "--product", "sugarcane", "--quantity-t", "0.225", "--timestamp", "3",
    ]));
    assert_ok(&out, "report-output");
    assert!(stdout(&out).contains("ok"), "exact expected output: {}", stdout(&out));

    let flags_out = dir.path().join("flags.json");
    let out = run(bin()
        .args(["ledger", "audit", "--chain", chain_s, "--flags-out"])
        .arg(&flags_out));
    assert_ok(&out, "audit");
    assert!(stdout(&out).contains("no pending flags"));
    assert_eq!(json(&flags_out).as_array().unwrap().len(), 0);

    let out = run(bin().args(["ledger", "verify", "--chain", chain_s]));
    assert_ok(&out, "verify");
    assert!(stdout(&out).contains("chain valid (5 blocks)"), "stdout: {}", stdout(&out));

    // Flip one digit inside the trade payload (block 3) and re-verify.
    let tampered = read(&chain).replacen("2.25", "2.26", 1);
    std::fs::write(&chain, tampered).unwrap();
    let out = run(bin().args(["ledger", "verify", "--chain", chain_s]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("corrupt at block 3"), "stderr: {}", stderr(&out));
}

#[test]
fn ledger_rejects_unregistered_and_invalid_reports() {
    let dir = TempDir::new().unwrap();
    let chain = dir.path().join("chain.jsonl");
    let chain_s = chain.to_str().unwrap();
    assert_ok(&run(bin().args(["ledger", "init", "--chain", chain_s])), "init");

    let out = run(bin().args([
        "ledger", "report-biomass", "--chain", chain_s, "--field", "ghost",
        "--fraction", "0.5",
    ]));
    assert_eq!(out.status.code(), Some(1), "unregistered field must be rejected");

    let out = run(bin().args([
        "ledger", "report-biomass", "--chain", chain_s, "--field", "ghost",
        "--fraction", "1.5",
    ]));
    assert_eq!(out.status.code(), Some(1), "fraction outside [0, 1] must be rejected");

    let out = run(bin().args(["ledger", "verify", "--chain", "missing.jsonl"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--chain"));
}

#[test]
fn scenario_flags_planted_violations_exactly() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("scenario");
    let out = run(bin()
        .args([
            "ledger", "scenario", "--seed", "9", "--farmers", "5", "--plants", "2",
            "--events", "60", "--biomass-violations", "2", "--output-violations", "1",
            "--out-dir",
        ])
        .arg(&out_dir));
    assert_ok(&out, "scenario");
    let text = stdout(&out);
    assert!(text.contains("precision 1.000, recall 1.000"), "stdout: {text}");

    assert_eq!(json(&out_dir.join("flags.json")).as_array().unwrap().len(), 3);
    assert_eq!(json(&out_dir.join("planted.json")).as_array().unwrap().len(), 3);

    let out = run(bin()
        .args(["ledger", "verify", "--chain"])
        .arg(out_dir.join("chain.jsonl")));
    assert_ok(&out, "verify scenario chain");
}

// ----------------------------------------------------------------- simulate

#[test]
fn simulate_extends_chain_and_replays_identically() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let chain = dir.path().join("chain.jsonl");
    let chain_s = chain.to_str().unwrap();
    assert_ok(&run(bin().args(["ledger", "init", "--chain", chain_s])), "init");
    for field in ["field-a", "field-b"] {
        let out = run(bin().args([
            "ledger", "register-farmer", "--chain", chain_s, "--id", field,
            "--crop", "maize", "--yield-t", "8",
        ]));
        assert_ok(&out, "register");
    }
    let baseline = read(&chain);

    let config = serde_json::json!({
        "seed": 3,
        "fields_to_survey": ["field-a", "field-b"],
        "battery_j": 50.0,
        "per_capture_overhead_j": 0.5,
        "swap_policy": { "ReserveFraction": { "reserve": 0.2 } },
        "roadmap": [],
        "field_size": 16,
    });
    let config_path = dir.path().join("mission.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let mut logs = Vec::new();
    for name in ["m1", "m2"] {
        let chain_out = dir.path().join(format!("chain-{name}.jsonl"));
        std::fs::write(&chain, &baseline).unwrap();
        let out = run(bin()
            .args(["simulate", "--config"])
            .arg(&config_path)
            .arg("--roadmap")
            .arg(fx.roadmap_json())
            .args(["--chain", chain_s, "--chain-out"])
            .arg(&chain_out)
            .arg("--out-dir")
            .arg(dir.path().join(name)));
        assert_ok(&out, "simulate");
        assert!(stdout(&out).contains("surveyed 2 of 2 fields"), "stdout: {}", stdout(&out));

        assert_eq!(
            read(&chain_out).lines().count(),
            baseline.lines().count() + 2,
            "one block appended per surveyed field"
        );
        let verify = run(bin().args(["ledger", "verify", "--chain"]).arg(&chain_out));
        assert_ok(&verify, "verify extended chain");

        logs.push(read(&dir.path().join(name).join("mission_log.json")));
    }
    assert_eq!(logs[0], logs[1], "same seed and chain state must replay byte-identically");

    let log: serde_json::Value = serde_json::from_str(&logs[0]).unwrap();
    let steps = log["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 2);
    let spent: f64 = steps.iter().map(|s| s["energy_spent_j"].as_f64().unwrap()).sum();
    let initial = log["initial_battery_j"].as_f64().unwrap();
    let remaining = log["remaining_battery_j"].as_f64().unwrap();
    assert_eq!(initial - spent, remaining, "battery bookkeeping must be exact");
    for step in steps {
        assert_eq!(step["verdict"], "ok", "baseline biomass readings are compliant");
    }
}

#[test]
fn simulate_notes_rejected_reports_without_extending_the_chain() {
    let fx = fixture();
    let dir = TempDir::new().unwrap();
    let chain = dir.path().join("chain.jsonl");
    let chain_s = chain.to_str().unwrap();
    assert_ok(&run(bin().args(["ledger", "init", "--chain", chain_s])), "init");

    let config = serde_json::json!({
        "seed": 3,
        "fields_to_survey": ["nobody-home"],
        "battery_j": 50.0,
        "per_capture_overhead_j": 0.5,
        "swap_policy": { "ReserveFraction": { "reserve": 0.2 } },
        "roadmap": [],
        "field_size": 16,
    });
    let config_path = dir.path().join("mission.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();

    let out = run(bin()
        .args(["simulate", "--config"])
        .arg(&config_path)
        .arg("--roadmap")
        .arg(fx.roadmap_json())
        .args(["--chain", chain_s, "--out-dir"])
        .arg(dir.path().join("m")));
    assert_ok(&out, "simulate over unregistered field");

    // The survey still happens; the on-chain report is refused and logged.
    let log = json(&dir.path().join("m/mission_log.json"));
    let steps = log["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 1);
    let note = steps[0]["note"].as_str().unwrap_or_default();
    assert!(note.contains("report rejected"), "note: {note:?}");
    assert!(steps[0].get("verdict").is_none(), "no contract verdict without an append");
    assert_eq!(read(&chain).lines().count(), 0, "chain must stay empty");
}
