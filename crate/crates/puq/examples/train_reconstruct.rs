//! Train a small unrolled reconstructor and sample it with Monte Carlo
//! dropout: predictive mean quality plus the phase-wise uncertainty map.
//!
//! ```sh
//! cargo run --release --example train_reconstruct
//! ```

use ndarray::Array3;
use num_complex::Complex;
use puq::harness::config::ExperimentConfig;
use puq::harness::pipeline::{prepare_seed_data, train_stage1};
use puq::harness::config::Stage1Kind;
use puq::recon::{mc_sample, McConfig};
use std::time::Instant;

fn main() -> anyhow::Result<()> {
    // a lightened desk config so the example finishes in about a minute
    let mut cfg = ExperimentConfig::desk();
    cfg.phantom.count = 6; // 4 train / 1 val / 1 test
    cfg.recon.epochs = 15;
    cfg.recon.mc_samples = 20;
    let seed = 1;

    let t0 = Instant::now();
    let data = prepare_seed_data(&cfg, seed)?;
    println!(
        "data: {} train / {} val / {} test images, {} coils, R = {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        cfg.sampling.coils,
        cfg.sampling.accel
    );
    let model = train_stage1(&cfg, &data, Stage1Kind::MseDropout)?;
    let trained = model.trained.as_ref().unwrap();
    println!(
        "trained {} epochs in {:.0}s, loss {:.5} -> {:.5}",
        trained.loss_curve.len(),
        t0.elapsed().as_secs_f64(),
        trained.loss_curve.first().unwrap(),
        trained.loss_curve.last().unwrap()
    );

    let case = &data.test[0];
    let mc = McConfig {
        samples: cfg.recon.mc_samples,
        seed: 99,
    };
    let (mean, sigma) = mc_sample(&trained.model, &case.zero_filled, &data.acq, &case.y, &mc)?;

    let err = |x: &Array3<Complex<f32>>| -> f64 {
        let num: f64 = x
            .iter()
            .zip(case.clean.iter())
            .map(|(a, b)| ((a - b).norm() as f64).powi(2))
            .sum();
        let den: f64 = case.clean.iter().map(|v| (v.norm() as f64).powi(2)).sum();
        (num / den).sqrt()
    };
    println!(
        "test image NRMSE: zero-filled {:.4} -> MC mean {:.4} (T = {})",
        err(&case.zero_filled),
        err(&mean),
        mc.samples
    );

    // uncertainty should track the actual per-phase reconstruction error
    println!("per-phase mean sigma vs mean |error| (foreground):");
    let (p, h, w) = mean.dim();
    for pi in 0..p {
        let mut s_acc = 0.0f64;
        let mut e_acc = 0.0f64;
        let mut n = 0usize;
        for i in 0..h {
            for j in 0..w {
                if case.phantom.foreground[[i, j]] {
                    s_acc += sigma[[pi, i, j]] as f64;
                    e_acc += (mean[[pi, i, j]] - case.clean[[pi, i, j]]).norm() as f64;
                    n += 1;
                }
            }
        }
        println!(
            "  phase {pi}: sigma {:.5}  |error| {:.5}",
            s_acc / n as f64,
            e_acc / n as f64
        );
    }
    Ok(())
}
