use puq::harness::config::ExperimentConfig;
use puq::harness::pipeline::run_ablation;
use std::time::Instant;

fn main() {
    let mut cfg = ExperimentConfig::desk();
    cfg.recon.epochs = 40;
    cfg.recon.mc_samples = 16;
    let out = std::env::temp_dir().join("puq_probe_ablation");
    let _ = std::fs::remove_dir_all(&out);
    let t0 = Instant::now();
    let table = run_ablation(&cfg, &out).unwrap();
    print!("{table}");
    println!("wall {:.0}s", t0.elapsed().as_secs_f64());
}
