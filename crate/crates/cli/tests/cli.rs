//! End-to-end runs of the `ctqwalk` binary over a toy configuration: every
//! subcommand, exit codes, overrides, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_ctqwalk")
}

const TOY_CONFIG: &str = r#"
experiment = "toy"
seed = 4242
output_dir = "OUT_DIR"

[chain]
num_sites = 5
neighbour_order = 2
couplings = [0.6, 0.2]

[initial_state]
kind = "basis"
site = 3

[evolution]
time = 1.5

[fisher]
grid_points = 4
chain_lengths = [5]
times = [1.0]

[datagen]
n_samp = 24
n_mc = 8
resources = 100000
low = -0.2
high = 1.2
fraction = 0.75

[network]
profile = "custom"
hidden_layers = [16, 16]

[training]
epochs = 3
batch_size = 16
learning_rate = 1e-3

[eval]
points = "grid"
axes = [{ low = 0.3, high = 0.7, count = 3 }, { low = 0.3, high = 0.7, count = 3 }]
replicas = 12

[[eval.slices]]
swept = 1
fixed = [{ axis = 2, value = 0.7 }]
tolerance = 1e-9
"#;

struct Workspace {
    _dir: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = dir.path().join("ctqwalk.toml");
    let text = TOY_CONFIG.replace("OUT_DIR", out.to_str().unwrap());
    std::fs::write(&config, text).unwrap();
    Workspace {
        _dir: dir,
        config,
        out,
    }
}

fn run(ws: &Workspace, args: &[&str]) -> Output {
    Command::new(binary())
        .arg("--config")
        .arg(&ws.config)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let ws = workspace();

    assert_success(&run(&ws, &["simulate"]));
    let sim = read(&ws.out.join("simulate/probabilities.csv"));
    assert!(sim.starts_with("site,probability\n"));
    assert_eq!(sim.lines().count(), 6);

    assert_success(&run(&ws, &["fisher-map"]));
    let index = read(&ws.out.join("fisher-map/index.csv"));
    assert!(index.contains("map_N5_t1.csv"));
    let map = read(&ws.out.join("fisher-map/map_N5_t1.csv"));
    assert!(map.starts_with("J1,J2,F11,F12,F21,F22,CRB1,CRB2,status\n"));
    assert_eq!(map.lines().count(), 17); // header + 4×4 grid

    assert_success(&run(&ws, &["gen-data"]));
    let train_file = read(&ws.out.join("dataset/train.csv"));
    assert!(train_file.starts_with("# ctqwalk dataset v1\n"));
    // 18 train bases × 8 replicas
    assert!(train_file.contains("# records=144"));

    assert_success(&run(&ws, &["train"]));
    assert!(ws.out.join("train/weights.bin").exists());
    let log = read(&ws.out.join("train/training_log.csv"));
    assert!(log.starts_with("epoch,train_mse,val_mse,seconds\n"));
    assert_eq!(log.lines().count(), 4);

    assert_success(&run(&ws, &["evaluate"]));
    let report = read(&ws.out.join("evaluate/report.csv"));
    assert!(report.starts_with(
        "J1,J2,mean1,mean2,var1,var2,bias1,bias2,crb1,crb2,ratio1,ratio2,status\n"
    ));
    assert_eq!(report.lines().count(), 10); // header + 3×3 grid
    assert!(ws.out.join("evaluate/summary.json").exists());
    let slice = read(&ws.out.join("evaluate/slices/slice_J1.csv"));
    assert!(slice.starts_with("J1,m_variance,crb\n"));
    assert_eq!(slice.lines().count(), 4); // three swept points at J2 = 0.7

    assert_success(&run(&ws, &["report"]));
    let summary = read(&ws.out.join("report/summary.txt"));
    assert!(summary.contains("ratio M·Δ²J / CRB quantiles per coupling"));
    assert!(summary.contains("config_digest="));
    let long = read(&ws.out.join("report/long.csv"));
    assert!(long.starts_with("point,coupling,J,mean,variance,bias,crb,ratio,status\n"));
    assert_eq!(long.lines().count(), 19); // header + 9 points × 2 couplings
}

#[test]
fn dataset_generation_is_byte_reproducible() {
    let ws = workspace();
    assert_success(&run(&ws, &["gen-data"]));
    let first = std::fs::read(ws.out.join("dataset/train.csv")).unwrap();
    let first_val = std::fs::read(ws.out.join("dataset/validation.csv")).unwrap();
    assert_success(&run(&ws, &["gen-data"]));
    assert_eq!(first, std::fs::read(ws.out.join("dataset/train.csv")).unwrap());
    assert_eq!(
        first_val,
        std::fs::read(ws.out.join("dataset/validation.csv")).unwrap()
    );

    // A different seed must change the data.
    assert_success(&run(&ws, &["gen-data", "--seed", "7"]));
    assert_ne!(first, std::fs::read(ws.out.join("dataset/train.csv")).unwrap());
}

#[test]
fn simulate_matches_the_two_site_closed_form() {
    let ws = workspace();
    let output = run(
        &ws,
        &[
            "simulate",
            "--set",
            "chain.num_sites=2",
            "--set",
            "chain.neighbour_order=1",
            "--set",
            "chain.couplings=[0.6]",
            "--set",
            "initial_state.site=1",
            "--set",
            "evolution.time=1.1",
        ],
    );
    assert_success(&output);
    let text = read(&ws.out.join("simulate/probabilities.csv"));
    let mut lines = text.lines().skip(1);
    let p1: f64 = lines.next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let p2: f64 = lines.next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let angle: f64 = 0.6 * 1.1;
    assert!((p1 - angle.cos().powi(2)).abs() < 1e-12);
    assert!((p2 - angle.sin().powi(2)).abs() < 1e-12);
}

#[test]
fn zero_coupling_keeps_the_initial_distribution() {
    let ws = workspace();
    let output = run(&ws, &["simulate", "--set", "chain.couplings=[0.0, 0.0]"]);
    assert_success(&output);
    let text = read(&ws.out.join("simulate/probabilities.csv"));
    let probabilities: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!((probabilities[2] - 1.0).abs() < 1e-12);
    assert!(probabilities.iter().sum::<f64>() - 1.0 < 1e-12);
}

#[test]
fn perfect_oracle_reports_zero_ratio() {
    let ws = workspace();
    let output = run(&ws, &["evaluate", "--perfect-oracle"]);
    assert_success(&output);
    let summary = read(&ws.out.join("evaluate/summary.json"));
    let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(parsed["echo"]["model"], "perfect-oracle");
    for q in parsed["quantiles"]["q95"].as_array().unwrap() {
        assert!(q.as_f64().unwrap().abs() < 1e-20);
    }
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let ws = workspace();

    // unknown config key → config-validation failure
    let bad_key = run(&ws, &["simulate", "--set", "chain.numsites=4"]);
    assert_eq!(bad_key.status.code(), Some(2));
    let message = String::from_utf8_lossy(&bad_key.stderr);
    assert!(message.contains("numsites"), "stderr: {message}");

    // coupling outside the admissible domain → config-validation failure
    let bad_value = run(&ws, &["simulate", "--set", "chain.couplings=[2.0, 0.1]"]);
    assert_eq!(bad_value.status.code(), Some(2));

    // asking train for a dataset that does not exist → config failure
    let missing_data = run(&ws, &["train"]);
    assert_eq!(missing_data.status.code(), Some(2));

    // corrupt dataset file → I/O failure
    assert_success(&run(&ws, &["gen-data"]));
    let train_path = ws.out.join("dataset/train.csv");
    let bytes = std::fs::read(&train_path).unwrap();
    std::fs::write(&train_path, &bytes[..bytes.len() / 2]).unwrap();
    let corrupt = run(&ws, &["train"]);
    assert_eq!(corrupt.status.code(), Some(4));
}

#[test]
fn environment_overrides_the_output_directory() {
    let ws = workspace();
    let elsewhere = ws.out.with_file_name("elsewhere");
    let output = Command::new(binary())
        .arg("--config")
        .arg(&ws.config)
        .arg("simulate")
        .env("CTQWALK_OUTPUT_DIR", &elsewhere)
        .output()
        .unwrap();
    assert_success(&output);
    assert!(elsewhere.join("simulate/probabilities.csv").exists());
    assert!(!ws.out.join("simulate/probabilities.csv").exists());
    let manifest = read(&elsewhere.join("simulate/manifest.txt"));
    assert!(manifest.contains("command=simulate"));
    assert!(manifest.contains("threads="));
}

#[test]
fn resumed_training_is_deterministic() {
    let ws = workspace();
    assert_success(&run(&ws, &["gen-data"]));
    assert_success(&run(&ws, &["train"]));
    let weights = ws.out.join("train/weights.bin");
    let staged = ws.out.join("stage1.bin");
    std::fs::copy(&weights, &staged).unwrap();

    // Resuming twice from the same weights with the same batch sequence must
    // give identical weight files.
    assert_success(&run(&ws, &["train", "--resume", staged.to_str().unwrap()]));
    let once = std::fs::read(&weights).unwrap();
    assert_success(&run(&ws, &["train", "--resume", staged.to_str().unwrap()]));
    let twice = std::fs::read(&weights).unwrap();
    assert_eq!(once, twice);
}
