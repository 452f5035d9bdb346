//! Black-box tests of the `profed` binary: flag precedence, failure exit
//! codes and the artifact layout of full runs on a small staged dataset.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

use profed::metrics::{ExperimentReport, ROUND_CSV_HEADER, SUMMARY_CSV_HEADER};
use profed::nn::load_checkpoint;
use profed::partitioning::{PartitionManifest, PartitionMethod};

fn profed() -> Command {
    Command::new(env!("CARGO_BIN_EXE_profed"))
}

fn run(args: &[&str]) -> Output {
    profed().args(args).output().expect("binary should spawn")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn write_idx_pair(dir: &Path, prefix: &str, n: usize, label_of: impl Fn(usize) -> u8) {
    let mut img = File::create(dir.join(format!("{prefix}-images-idx3-ubyte"))).unwrap();
    img.write_all(&0x0000_0803u32.to_be_bytes()).unwrap();
    img.write_all(&(n as u32).to_be_bytes()).unwrap();
    img.write_all(&28u32.to_be_bytes()).unwrap();
    img.write_all(&28u32.to_be_bytes()).unwrap();
    for s in 0..n {
        let row: Vec<u8> = (0..784).map(|p| ((s * 31 + p * 7) % 256) as u8).collect();
        img.write_all(&row).unwrap();
    }
    let mut lab = File::create(dir.join(format!("{prefix}-labels-idx1-ubyte"))).unwrap();
    lab.write_all(&0x0000_0801u32.to_be_bytes()).unwrap();
    lab.write_all(&(n as u32).to_be_bytes()).unwrap();
    let labels: Vec<u8> = (0..n).map(&label_of).collect();
    lab.write_all(&labels).unwrap();
}

/// Stages a miniature MNIST-shaped dataset under `root/data`.
fn stage_data(root: &Path) -> String {
    let raw = root.join("data/MNIST/raw");
    std::fs::create_dir_all(&raw).unwrap();
    write_idx_pair(&raw, "train", 240, |s| (s % 10) as u8);
    write_idx_pair(&raw, "t10k", 40, |s| (s % 10) as u8);
    root.join("data").to_string_lossy().into_owned()
}

#[test]
fn help_and_version_exit_cleanly() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["run", "--help"]).status.success());
    assert!(run(&["--version"]).status.success());
}

#[test]
fn unknown_flags_and_values_are_usage_errors() {
    let out = run(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["run", "--dataset", "MINST"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("MINST"), "error should name the value");

    let out = run(&["run", "--partitioning", "dirichelt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("dirichelt"));
}

#[test]
fn strategy_parameter_mismatches_are_usage_errors() {
    let out = run(&["run", "--partitioning", "iid", "--alpha", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stderr(&out);
    assert!(text.contains("alpha"), "unhelpful message: {text}");

    let out = run(&["run", "--algorithm", "fedavg", "--mu", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_file_keys_are_rejected_with_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.conf");
    std::fs::write(&config, "rounds = 2\nlern_rate = 0.1\n").unwrap();
    let out = run(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = stderr(&out);
    assert!(text.contains("lern_rate") && text.contains('2'), "message: {text}");
}

#[test]
fn missing_data_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--data-dir",
        tmp.path().join("nowhere").to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = stage_data(tmp.path());
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "run",
        "--data-dir", &data,
        "--out-dir", out_dir.to_str().unwrap(),
        "--areas", "2",
        "--devices", "4",
        "--rounds", "2",
        "--seeds", "0,1",
        "--batch", "16",
    ]);
    assert!(
        out.status.success(),
        "run failed: {}\n{}",
        stdout(&out),
        stderr(&out)
    );
    let run_dir = out_dir.join("MNIST_fedavg_iid_2areas");
    assert!(stdout(&out).contains("test accuracy mean"));
    assert!(run_dir.is_dir());

    for seed in ["0", "1"] {
        let csv = std::fs::read_to_string(run_dir.join(format!("seed{seed}_rounds.csv"))).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], ROUND_CSV_HEADER);
        assert_eq!(lines.len(), 3, "2 rounds expected: {csv}");
        assert!(lines[1].starts_with("1,"));

        let model = load_checkpoint(&run_dir.join(format!("seed{seed}_model.bin"))).unwrap();
        assert_eq!(model.shape(), (784, 128, 10));
    }

    let summary = std::fs::read_to_string(run_dir.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], SUMMARY_CSV_HEADER);
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("MNIST,fedavg,iid,2,4,"));

    let report = ExperimentReport::load(&run_dir.join("report.json")).unwrap();
    report.check_consistent().unwrap();
    assert_eq!(report.config.devices, 4);
    assert_eq!(report.seed_runs.len(), 2);
}

#[test]
fn sequential_flag_reproduces_the_parallel_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = stage_data(tmp.path());
    let mut outputs = Vec::new();
    for (dir, extra) in [("par", None), ("seq", Some("--sequential"))] {
        let out_dir = tmp.path().join(dir);
        let mut args = vec![
            "run",
            "--data-dir", &data,
            "--out-dir", out_dir.to_str().unwrap(),
            "--areas", "2",
            "--devices", "4",
            "--rounds", "2",
            "--seeds", "3",
            "--batch", "16",
        ];
        args.extend(extra);
        let out = profed().args(&args).output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        let run_dir = out_dir.join("MNIST_fedavg_iid_2areas");
        outputs.push((
            std::fs::read(run_dir.join("seed3_rounds.csv")).unwrap(),
            std::fs::read(run_dir.join("seed3_model.bin")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "round CSVs differ");
    assert_eq!(outputs[0].1, outputs[1].1, "checkpoints differ");
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = stage_data(tmp.path());
    let config = tmp.path().join("exp.conf");
    std::fs::write(
        &config,
        format!(
            "# miniature setup\nrounds = 3\nareas = 2\ndevices = 4\nbatch = 16\nseeds = 0\ndata_dir = {data}\nout_dir = {}\n",
            tmp.path().join("out").display()
        ),
    )
    .unwrap();
    let out = run(&["run", "--config", config.to_str().unwrap(), "--rounds", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(
        tmp.path().join("out/MNIST_fedavg_iid_2areas/seed0_rounds.csv"),
    )
    .unwrap();
    assert_eq!(csv.lines().count(), 2, "flag must override rounds: {csv}");
    let report = ExperimentReport::load(
        &tmp.path().join("out/MNIST_fedavg_iid_2areas/report.json"),
    )
    .unwrap();
    assert_eq!(report.config.rounds, 1);
}

#[test]
fn partition_subcommand_writes_a_deterministic_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = stage_data(tmp.path());
    let out_dir = tmp.path().join("parts");
    let args = [
        "partition",
        "--data-dir", &data,
        "--out-dir", out_dir.to_str().unwrap(),
        "--partitioning", "dirichlet",
        "--alpha", "0.5",
        "--areas", "2",
        "--devices", "4",
    ];
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("mean inter-region TV distance"), "stdout: {text}");

    let path = out_dir.join("MNIST_dirichlet_2areas_partition.json");
    let manifest = PartitionManifest::load(&path).unwrap();
    assert_eq!(manifest.dataset, "MNIST");
    assert_eq!(manifest.method, PartitionMethod::Dirichlet { alpha: 0.5 });
    assert_eq!(manifest.regions.len(), 2);
    assert_eq!(manifest.devices.len(), 4);
    let total: usize = manifest.regions.iter().map(Vec::len).sum();
    assert_eq!(total, 192, "80% of 240 staged samples");

    let first = std::fs::read(&path).unwrap();
    let out = run(&args);
    assert!(out.status.success());
    assert_eq!(first, std::fs::read(&path).unwrap(), "manifest not deterministic");
}

#[test]
fn partition_manifest_holds_five_regions_and_fifty_devices() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("data/MNIST/raw");
    std::fs::create_dir_all(&raw).unwrap();
    write_idx_pair(&raw, "train", 500, |s| (s % 10) as u8);
    write_idx_pair(&raw, "t10k", 40, |s| (s % 10) as u8);
    let out_dir = tmp.path().join("parts");
    let out = run(&[
        "partition",
        "--data-dir", tmp.path().join("data").to_str().unwrap(),
        "--out-dir", out_dir.to_str().unwrap(),
        "--partitioning", "iid",
        "--areas", "5",
        "--devices", "50",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest =
        PartitionManifest::load(&out_dir.join("MNIST_iid_5areas_partition.json")).unwrap();
    assert_eq!(manifest.regions.len(), 5);
    assert_eq!(manifest.devices.len(), 50);
    for region in &manifest.regions {
        assert_eq!(region.len(), 80, "400 training samples over 5 regions");
    }
    for device in &manifest.devices {
        assert_eq!(device.indices.len(), 8, "10 devices per region");
    }
}

#[test]
fn report_subcommand_merges_runs_and_renders_charts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = stage_data(tmp.path());
    let out_dir = tmp.path().join("out");
    for algorithm in ["fedavg", "fedprox"] {
        let out = run(&[
            "run",
            "--data-dir", &data,
            "--out-dir", out_dir.to_str().unwrap(),
            "--algorithm", algorithm,
            "--areas", "2",
            "--devices", "4",
            "--rounds", "2",
            "--seeds", "0,1",
            "--batch", "16",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let avg_dir = out_dir.join("MNIST_fedavg_iid_2areas");
    let prox_dir = out_dir.join("MNIST_fedprox_iid_2areas");
    let report_dir = tmp.path().join("report");
    let out = run(&[
        "report",
        avg_dir.to_str().unwrap(),
        prox_dir.to_str().unwrap(),
        "--out", report_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let merged = std::fs::read_to_string(report_dir.join("summary.csv")).unwrap();
    assert_eq!(merged.lines().count(), 3, "merged summary: {merged}");
    assert!(merged.contains("MNIST,fedavg,") && merged.contains("MNIST,fedprox,"));
    let svg = std::fs::read_to_string(report_dir.join("MNIST_fedavg_iid_2areas.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2, "one line per seed");
    assert!(report_dir.join("MNIST_fedprox_iid_2areas.svg").exists());

    // The same run twice would double-count a configuration.
    let out = run(&[
        "report",
        avg_dir.to_str().unwrap(),
        avg_dir.to_str().unwrap(),
        "--out", tmp.path().join("dup").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fetch_on_staged_files_records_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = stage_data(tmp.path());
    let out = run(&["fetch", "--data-dir", &data]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("MNIST"));
    assert!(Path::new(&data).join("MNIST/manifest.json").is_file());
}
