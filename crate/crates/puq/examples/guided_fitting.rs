//! The full two-stage pipeline on a small config: uncertainty-guided MLP
//! fitting versus its unguided twin versus the classical zero-filled+LSQ
//! baseline.
//!
//! ```sh
//! cargo run --release --example guided_fitting
//! ```

use puq::harness::config::ExperimentConfig;
use puq::harness::pipeline::directional_study;
use std::time::Instant;

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::desk();
    cfg.phantom.count = 8; // 6 train / 1 val / 1 test
    cfg.recon.epochs = 20;
    cfg.recon.mc_samples = 10;
    cfg.seeds = vec![1];
    cfg.repeats = 1;

    let out = std::env::temp_dir().join("puq_guided_fitting");
    let _ = std::fs::remove_dir_all(&out);
    let t0 = Instant::now();
    let report = directional_study(&cfg, &out)?;
    for s in &report.seeds {
        println!("seed {}", s.seed);
        println!("  guided   (uncertainty in)  NRMSE {:.4}  SSIM {:.4}", s.puq_nrmse, s.puq_ssim);
        println!("  unguided (signal only)     NRMSE {:.4}  SSIM {:.4}", s.wog_nrmse, s.wog_ssim);
        println!("  zero-filled + LSQ          NRMSE {:.4}", s.zf_nrmse);
        println!(
            "  both stage-2 paths consumed identical stage-1 artifacts: {}",
            s.stage1_hash_puq == s.stage1_hash_wog
        );
    }
    println!("artifacts in {} ({:.0}s)", out.display(), t0.elapsed().as_secs_f64());
    Ok(())
}
