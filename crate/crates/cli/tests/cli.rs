//! End-to-end tests driving the compiled `ufo` binary through the full
//! artifact pipeline and checking the documented exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use ufo_core::taskgen::{TaskSpec, TaskSuiteSpec};
use ufo_core::trainer::TrainConfig;
use ufo_core::RunConfig;

fn ufo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ufo"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn exit_of(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_task(identities: usize, samples: usize) -> TaskSpec {
    TaskSpec {
        identities,
        samples_per_identity: samples,
        image_size: 8,
        split: Default::default(),
        jitter: 2,
        noise: 30,
        id_strength: 96,
    }
}

fn write_spec(path: &Path, seed: u64) {
    let spec = TaskSuiteSpec {
        tasks: vec![tiny_task(3, 6), tiny_task(3, 7)],
        relatedness: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        seed,
    };
    fs::write(path, serde_json::to_vec_pretty(&spec).unwrap()).unwrap();
}

fn write_config(path: &Path, seed: u64, lr: f64) {
    let config = RunConfig {
        heads: vec![2, 4],
        mlp_ratios: vec![1.0, 2.0],
        num_layers: 2,
        embed_dim: 8,
        head_dim: 2,
        forced_keep_layers: vec![],
        patch_size: 4,
        feature_dim: 6,
        train: TrainConfig::new(4, 25, lr, 5, seed),
        extract_delta: 0.2,
    };
    fs::write(path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
}

#[test]
fn full_chain_through_the_binary() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let spec = root.join("spec.json");
    let config = root.join("config.json");
    let data = root.join("data");
    let run = root.join("run");
    write_spec(&spec, 11);
    write_config(&config, 11, 0.05);

    let out = run_ok(ufo().args(["gen-tasks", "--spec"]).arg(&spec).arg("--out").arg(&data));
    assert!(stdout_of(&out).contains("generated 2 tasks"));
    assert!(data.join("tasks.ufod").is_file());

    run_ok(ufo()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run));
    assert!(run.join("manifest.json").is_file());
    assert!(run.join("supernet.ufoc").is_file());
    assert!(run.join("train_log.jsonl").is_file());

    // No --data: the suite regenerates from the manifest.
    let bench = run.join("bench.csv");
    let out = run_ok(ufo()
        .args(["eval-subnets", "--run"])
        .arg(&run)
        .args(["--count", "12", "--seed", "9", "--out"])
        .arg(&bench));
    assert!(stdout_of(&out).contains("scored 12 architectures on 2 benchmarks"));

    let out = run_ok(ufo()
        .args(["fit-predictors", "--bench"])
        .arg(&bench)
        .arg("--out")
        .arg(&run)
        .arg("--threshold=-1"));
    let text = stdout_of(&out);
    assert!(text.contains("task 0:") && text.contains("task 1:"), "{text}");
    assert!(run.join("predictors/task0.ufop").is_file());
    assert!(run.join("predictors/task1.ufop").is_file());
    assert!(run.join("predictors/readiness.json").is_file());

    let report_path = run.join("search_report.json");
    let out = run_ok(ufo()
        .args(["search", "--run"])
        .arg(&run)
        .args(["--targets", "0", "--flops-frac", "0.9", "--subset-size", "40", "--out"])
        .arg(&report_path));
    assert!(stdout_of(&out).contains("best h"));

    // Identical invocation reproduces the identical report.
    let first = fs::read(&report_path).unwrap();
    let report2 = run.join("search_report2.json");
    run_ok(ufo()
        .args(["search", "--run"])
        .arg(&run)
        .args(["--targets", "0", "--flops-frac", "0.9", "--subset-size", "40", "--out"])
        .arg(&report2));
    assert_eq!(first, fs::read(&report2).unwrap());

    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let best = report["choice"]["encoding"].as_str().unwrap();

    let model = run.join("model.ufot");
    let out = run_ok(ufo()
        .args(["extract", "--run"])
        .arg(&run)
        .args(["--arch", best, "--targets", "0", "--out"])
        .arg(&model));
    assert!(model.is_file());
    let text = stdout_of(&out);
    let nums: Vec<u64> = text
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().unwrap())
        .collect();
    assert!(nums[0] < nums[1], "trimmed not smaller: {text}");

    let corr = run.join("corr.csv");
    run_ok(ufo().args(["correlate", "--bench"]).arg(&bench).arg("--out").arg(&corr));
    assert!(corr.is_file());
    assert!(run.join("corr.svg").is_file());

    // Canonical re-export is byte-identical to what eval-subnets wrote.
    let bench2 = run.join("bench2.csv");
    run_ok(ufo()
        .args(["bench", "export", "--run"])
        .arg(&run)
        .arg("--out")
        .arg(&bench2));
    assert_eq!(fs::read(&bench).unwrap(), fs::read(&bench2).unwrap());

    // Import tolerates one bad row and reports its line number.
    let mut raw = String::from_utf8(fs::read(&bench).unwrap()).unwrap();
    raw.push_str("zz,not-an-encoding,1,1,5.0,5.0\n");
    let raw_path = root.join("raw.csv");
    fs::write(&raw_path, raw).unwrap();
    let imported = root.join("imported.csv");
    let out = ufo()
        .args(["bench", "import", "--csv"])
        .arg(&raw_path)
        .arg("--run")
        .arg(&run)
        .arg("--out")
        .arg(&imported)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 14"));
    assert_eq!(fs::read(&bench).unwrap(), fs::read(&imported).unwrap());
}

#[test]
fn usage_problems_exit_1_and_help_exits_0() {
    let (code, _) = exit_of(ufo().arg("--definitely-not-a-flag"));
    assert_eq!(code, 1);

    let (code, _) = exit_of(&mut ufo());
    assert_eq!(code, 1);

    let (code, stderr) = exit_of(ufo().args([
        "extract", "--run", "nowhere", "--arch", "x", "--targets", "a,b", "--out", "m",
    ]));
    assert_eq!(code, 1, "{stderr}");
    assert!(stderr.contains("--targets"), "{stderr}");

    let (code, _) = exit_of(ufo().arg("--help"));
    assert_eq!(code, 0);
    let (code, _) = exit_of(ufo().arg("--version"));
    assert_eq!(code, 0);

    let (code, stderr) = exit_of(
        ufo().args(["gen-tasks", "--spec", "s.json", "--out", "d"]).env("UFO_SEED", "not-a-number"),
    );
    assert_eq!(code, 1, "{stderr}");
    assert!(stderr.contains("UFO_SEED"), "{stderr}");
}

#[test]
fn data_problems_exit_2_and_name_the_missing_step() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();

    let (code, stderr) = exit_of(ufo().args([
        "train", "--config", "missing.json", "--data", "nowhere", "--out", "run",
    ]));
    assert_eq!(code, 2, "{stderr}");

    let empty_run = root.join("empty");
    fs::create_dir_all(&empty_run).unwrap();
    let (code, stderr) = exit_of(
        ufo().args(["eval-subnets", "--run"])
            .arg(&empty_run)
            .args(["--count", "4", "--seed", "1", "--out", "b.csv"]),
    );
    assert_eq!(code, 2, "{stderr}");
    assert!(stderr.contains("train"), "{stderr}");

    let (code, stderr) = exit_of(
        ufo().args(["bench", "export", "--run"]).arg(&empty_run).args(["--out", "b.csv"]),
    );
    assert_eq!(code, 2, "{stderr}");
}

#[test]
fn numerical_failures_exit_3() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let spec = root.join("spec.json");
    let config = root.join("config.json");
    let data = root.join("data");
    write_spec(&spec, 5);
    write_config(&config, 5, 1e15);

    run_ok(ufo().args(["gen-tasks", "--spec"]).arg(&spec).arg("--out").arg(&data));
    let (code, stderr) = exit_of(
        ufo().args(["train", "--config"])
            .arg(&config)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(root.join("run")),
    );
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.contains("non-finite"), "{stderr}");
}

#[test]
fn ufo_seed_overrides_config_seeds() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let spec = root.join("spec.json");
    let config = root.join("config.json");
    let data = root.join("data");
    let run = root.join("run");
    write_spec(&spec, 5);
    write_config(&config, 5, 0.05);

    let out = run_ok(
        ufo().args(["gen-tasks", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(&data)
            .env("UFO_SEED", "4242"),
    );
    assert!(stdout_of(&out).contains("(seed 4242)"));

    run_ok(
        ufo().args(["train", "--config"])
            .arg(&config)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&run)
            .env("UFO_SEED", "4242"),
    );
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4242);
}
