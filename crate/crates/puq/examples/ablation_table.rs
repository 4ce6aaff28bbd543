//! Mini ablation run: all seven variant rows with mean ± std over repeats.
//!
//! ```sh
//! cargo run --release --example ablation_table
//! ```

use puq::harness::config::ExperimentConfig;
use puq::harness::pipeline::run_ablation;
use std::time::Instant;

fn main() -> anyhow::Result<()> {
    // shrunk well below the desk defaults so all 7 x 2 cells stay quick
    let mut cfg = ExperimentConfig::desk();
    cfg.phantom.height = 32;
    cfg.phantom.width = 32;
    cfg.phantom.count = 6;
    cfg.sampling.coils = 2;
    cfg.sampling.accel = 3;
    cfg.sampling.acs_frac = 0.1;
    cfg.recon.hidden_channels = 16;
    cfg.recon.epochs = 10;
    cfg.recon.mc_samples = 8;
    cfg.fit.epochs = 60;
    cfg.seeds = vec![1, 2];
    cfg.repeats = 2;

    let out = std::env::temp_dir().join("puq_ablation_table");
    let _ = std::fs::remove_dir_all(&out);
    let t0 = Instant::now();
    let table = run_ablation(&cfg, &out)?;
    print!("{table}");
    println!("({} records in {:.0}s)", table.records.len(), t0.elapsed().as_secs_f64());
    Ok(())
}
