//! Guided-vs-unguided curves along the Monte Carlo sample-count axis.
//!
//! ```sh
//! cargo run --release --example hyperparameter_sweep
//! ```

use puq::harness::config::ExperimentConfig;
use puq::harness::pipeline::{run_sweep, SweepAxis};
use std::time::Instant;

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.phantom.height = 32;
    cfg.phantom.width = 32;
    cfg.phantom.count = 6;
    cfg.sampling.coils = 2;
    cfg.sampling.accel = 3;
    cfg.sampling.acs_frac = 0.1;
    cfg.recon.hidden_channels = 16;
    cfg.recon.epochs = 10;
    cfg.fit.epochs = 60;
    cfg.seeds = vec![1];
    cfg.repeats = 1;

    let out = std::env::temp_dir().join("puq_sweep");
    let _ = std::fs::remove_dir_all(&out);
    let t0 = Instant::now();
    // the sample-count axis reuses one trained model per seed, so the grid
    // only re-runs sampling and fitting
    let rows = run_sweep(&cfg, SweepAxis::McSamples, &out)?;
    println!("{:>10} {:>8} {:>8}", "T", "variant", "NRMSE");
    for r in &rows {
        println!("{:>10} {:>8} {:>8.4}", r.value, r.variant, r.nrmse);
    }
    println!("sweep.csv in {} ({:.0}s)", out.display(), t0.elapsed().as_secs_f64());
    Ok(())
}
