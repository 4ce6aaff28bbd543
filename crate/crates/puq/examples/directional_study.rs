//! Desk-scale directional comparison: the guided fit against its unguided
//! twin and the zero-filled+LSQ baseline, 3 seeds, shared stage-1 artifacts.
//!
//! This is the full desk configuration (64x64, 8 phases, 4 coils, R = 4,
//! T = 20, 50 epochs) and takes on the order of ten minutes on two cores:
//!
//! ```sh
//! cargo run --release --example directional_study
//! ```

use puq::harness::config::ExperimentConfig;
use puq::harness::pipeline::directional_study;
use std::time::Instant;

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::desk();
    let out = std::env::temp_dir().join("puq_directional_study");
    let _ = std::fs::remove_dir_all(&out);
    let t0 = Instant::now();
    let report = directional_study(&cfg, &out)?;
    println!("{:>6} {:>10} {:>10} {:>12} {:>10}", "seed", "guided", "unguided", "zero-filled", "hashes");
    for s in &report.seeds {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>12.4} {:>10}",
            s.seed,
            s.puq_nrmse,
            s.wog_nrmse,
            s.zf_nrmse,
            if s.stage1_hash_puq == s.stage1_hash_wog { "match" } else { "DIFFER" }
        );
    }
    println!(
        "means: guided {:.4}, unguided {:.4}, zero-filled {:.4} ({:.0}s total)",
        report.mean_puq_nrmse,
        report.mean_wog_nrmse,
        report.mean_zf_nrmse,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
