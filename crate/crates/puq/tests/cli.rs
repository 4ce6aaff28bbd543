//! Smoke tests for the command-line interface: subcommands compose through
//! the shared artifact layout.

use std::process::Command;

fn tiny_config_toml() -> String {
    r#"
preset = "desk"
variant = "puq"
seeds = [3]
repeats = 1

[phantom]
height = 32
width = 32
regions_min = 6
regions_max = 8
t1_range_ms = [300.0, 2000.0]
t2_range_ms = [40.0, 250.0]
pd_range = [0.5, 1.0]
count = 4
split = [0.5, 0.25, 0.25]

[sequence]
kind = "t2prep"
timings_ms = [0.0, 25.0, 45.0, 85.0]

[sampling]
coils = 2
accel = 2
acs_frac = 0.1

[noise]
snr = 30.0

[recon]
iterations = 5
hidden_channels = 8
dropout = 0.3
mc_samples = 3
epochs = 2
batch = 4
lr = 0.01
clip = 0.01

[fit]
epochs = 10
lr = 0.001
batch = 1024
"#
    .to_string()
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_puq"))
        .args(args)
        .output()
        .expect("spawn puq binary")
}

#[test]
fn stage_subcommands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, tiny_config_toml()).unwrap();
    let out = dir.path().join("out");
    let cfg = config.to_str().unwrap();
    let out_s = out.to_str().unwrap();

    for sub in ["phantom", "simulate", "train-recon", "reconstruct", "train-fit", "fit", "eval"] {
        let r = run(&[sub, "--config", cfg, "--out", out_s]);
        assert!(
            r.status.success(),
            "{sub} failed:\n{}\n{}",
            String::from_utf8_lossy(&r.stdout),
            String::from_utf8_lossy(&r.stderr)
        );
    }
    assert!(out.join("phantom_seed3").join("t2_ms.pgm").is_file());
    assert!(out.join("simulate_seed3").join("phases.tnsr").is_file());
    assert!(out.join("puq").join("seed3").join("recon_weights").join("manifest.txt").is_file());
    assert!(out.join("puq").join("seed3").join("mlp_weights").join("manifest.txt").is_file());
    assert!(out.join("puq").join("seed3").join("test0_param.tnsr").is_file());
    assert!(out.join("metrics.csv").is_file());
}

#[test]
fn rejects_bad_flags_and_configs() {
    let r = run(&["sweep", "--axis", "bogus"]);
    assert!(!r.status.success());
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "unknown_key = 1\n").unwrap();
    let r = run(&["eval", "--config", config.to_str().unwrap()]);
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("loading config"), "stderr: {err}");
}
