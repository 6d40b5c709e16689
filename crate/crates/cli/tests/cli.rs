//! End-to-end checks of the binary: artifacts on disk, exit-code classes,
//! and determinism under a fixed seed.

use std::path::Path;
use std::process::{Command, Output};

fn arzctl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arzctl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let base = r#"
seed = 7
out_dir = "run"

[sim]
t_end = 30.0

[dataset]
n_samples = 12
grid_n = 11

[kernels]
n = 41

[training]
p = 4
hidden = [16, 16]
max_epochs = 40
patience = 40
"#;
    let path = dir.join("config.toml");
    std::fs::write(&path, format!("{base}\n{extra}")).unwrap();
    path
}

#[test]
fn solve_kernels_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let out = arzctl(dir.path(), &["--config", "config.toml", "solve-kernels"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("run/kernels.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,xi,kw,kv"));
    assert_eq!(lines.count(), 41 * 42 / 2);
    assert!(dir.path().join("run/summary.json").exists());
}

#[test]
fn unknown_config_key_exits_2_naming_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[sim]\nnxx = 50\n").unwrap();
    let out = arzctl(dir.path(), &["--config", "bad.toml", "solve-kernels"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nxx"), "stderr should name the key: {stderr}");
    assert!(stderr.contains("line"), "stderr should carry the line: {stderr}");
}

#[test]
fn uncongested_density_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[model]\nrho_star_veh_km = 70.0\n");
    let out = arzctl(dir.path(), &["--config", "config.toml", "solve-kernels"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("congested"), "stderr: {stderr}");
}

#[test]
fn impossible_residual_tolerance_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("config.toml"),
        "out_dir = \"run\"\n[kernels]\nn = 41\nresidual_tol = 1e-15\n",
    )
    .unwrap();
    let out = arzctl(dir.path(), &["--config", "config.toml", "solve-kernels"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("residual"), "stderr: {stderr}");
}

#[test]
fn missing_model_exits_4_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[controller]\nkind = \"no-kernels\"\n");
    let out = arzctl(dir.path(), &["--config", "config.toml", "simulate"]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("train --operator kernel"),
        "stderr should point at the missing training step: {stderr}"
    );
}

#[test]
fn simulate_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let run = || {
        let out = arzctl(dir.path(), &["--config", "config.toml", "simulate"]);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        (
            std::fs::read(dir.path().join("run/states.csv")).unwrap(),
            std::fs::read(dir.path().join("run/control.csv")).unwrap(),
            std::fs::read(dir.path().join("run/norms.csv")).unwrap(),
        )
    };
    let first = run();
    let second = run();
    assert_eq!(first.0, second.0);
    assert_eq!(first.1, second.1);
    assert_eq!(first.2, second.2);
    // Every CSV leads with its header row.
    for (bytes, header) in
        [(first.0, "t,x,rho,v"), (first.1, "t,u"), (first.2, "t,l2_w,l2_v")]
    {
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().next(), Some(header));
    }
}

#[test]
fn dataset_manifest_records_span_and_training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let gen = arzctl(dir.path(), &["--config", "config.toml", "gen-dataset", "--operator", "kernel"]);
    assert!(gen.status.success(), "stderr: {}", String::from_utf8_lossy(&gen.stderr));
    let manifest =
        std::fs::read_to_string(dir.path().join("run/kernel_dataset/manifest.txt")).unwrap();
    assert!(manifest.contains("lambda2_min = 5"), "manifest: {manifest}");
    assert!(manifest.contains("lambda2_max = 25"), "manifest: {manifest}");

    let train = |_: usize| -> Vec<u8> {
        let out = arzctl(dir.path(), &["--config", "config.toml", "train", "--operator", "kernel"]);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.path().join("run/kernel_model.bin")).unwrap()
    };
    assert_eq!(train(0), train(1), "same seed must reproduce the model bit-for-bit");

    // A different seed produces a different model.
    let out = arzctl(
        dir.path(),
        &["--config", "config.toml", "--seed", "8", "train", "--operator", "kernel"],
    );
    assert!(out.status.success());
    let other = std::fs::read(dir.path().join("run/kernel_model.bin")).unwrap();
    assert_ne!(train(2), other);
}

#[test]
fn train_without_dataset_exits_2_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let out = arzctl(dir.path(), &["--config", "config.toml", "train", "--operator", "law"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gen-dataset"), "stderr: {stderr}");
}

#[test]
fn stale_dataset_provenance_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let gen = arzctl(dir.path(), &["--config", "config.toml", "gen-dataset", "--operator", "kernel"]);
    assert!(gen.status.success());
    // A different sample count invalidates the stored data.
    let stale = std::fs::read_to_string(dir.path().join("config.toml"))
        .unwrap()
        .replace("n_samples = 12", "n_samples = 13");
    std::fs::write(dir.path().join("config.toml"), stale).unwrap();
    let out = arzctl(dir.path(), &["--config", "config.toml", "train", "--operator", "kernel"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("different configuration"), "stderr: {stderr}");
}

#[test]
fn compare_emits_table_with_zero_baseline_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    for op in ["kernel", "law"] {
        assert!(arzctl(dir.path(), &["--config", "config.toml", "gen-dataset", "--operator", op])
            .status
            .success());
        assert!(arzctl(dir.path(), &["--config", "config.toml", "train", "--operator", op])
            .status
            .success());
    }
    let out = arzctl(dir.path(), &["--config", "config.toml", "compare"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("run/comparison.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("method,cold_start_s,avg_step_s,avg_l2_error,final_norm"));
    let baseline: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(baseline[0], "backstepping");
    assert_eq!(baseline[3].parse::<f64>().unwrap(), 0.0);
    assert_eq!(table.lines().count(), 5);
    assert!(dir.path().join("run/control_overlay.csv").exists());
    assert!(dir.path().join("run/norms_overlay.csv").exists());
    assert!(dir.path().join("run/plot_compare.py").exists());
}
