//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its runtime (visible via `cargo test --test acceptance -- --nocapture`).
//!
//! Criteria 1-6 and 9 are property suites; 7 and 8 run the end-to-end desk
//! experiments and take several minutes each on two cores.

use ndarray::{Array2, Array3, Array4};
use num_complex::Complex;
use std::sync::Arc;
use std::time::Instant;

use puq::diffnum::gradcheck::central_diff_check;
use puq::diffnum::rng::{purpose, RngStream};
use puq::diffnum::tensor::Tensor;
use puq::fitting::{lsq_fit_t1_molli, lsq_fit_t2};
use puq::harness::config::{ExperimentConfig, Variant};
use puq::harness::metrics::{nrmse, read_metrics_csv, ssim};
use puq::harness::pipeline::{directional_study, run_ablation, run_pipeline};
use puq::kspace::{acs_range, fft2c, make_mask, make_mask_set, sampled_lines, AcquisitionModel};
use puq::physics;
use puq::recon::{
    deterministic_forward, mc_outputs, mc_sample, to_channel_tensor, unrolled_graph, DcOp,
    McConfig, UnrolledConfig, UnrolledModel,
};

fn rand_tensor(shape: &[usize], rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, || rng.range(-1.0, 1.0))
}

fn rand_image(p: usize, h: usize, w: usize, rng: &mut RngStream) -> Array3<Complex<f64>> {
    Array3::from_shape_fn((p, h, w), |_| {
        Complex::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0))
    })
}

// ---------------------------------------------------------------------------
// criterion 1: gradient suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_suite() {
    let t0 = Instant::now();
    let mut rng = RngStream::new(101, "acceptance-grad", 0);
    let trials = 100;
    let mut worst_ops = 0.0f64;

    for trial in 0..trials {
        // conv2d + mse
        let (b, cin, cout) = (1 + trial % 2, 1 + trial % 3, 1 + (trial / 2) % 2);
        let (h, w) = (3 + trial % 3, 3 + (trial / 3) % 3);
        let x = rand_tensor(&[b, cin, h, w], &mut rng);
        let wt = rand_tensor(&[cout, cin, 3, 3], &mut rng);
        let bias = rand_tensor(&[cout], &mut rng);
        let target = rand_tensor(&[b, cout, h, w], &mut rng);
        let r = central_diff_check(
            &[x, wt, bias],
            |tape, ids| {
                let t = tape.constant(target.clone());
                let y = tape.conv2d(ids[0], ids[1], ids[2]).unwrap();
                tape.mse_loss(y, t).unwrap()
            },
            1e-5,
            3,
            &mut rng,
        );
        worst_ops = worst_ops.max(r.max_rel_err);

        // linear + relu + mse
        let (bb, din, dout) = (1 + trial % 3, 2 + trial % 4, 1 + trial % 3);
        let x = rand_tensor(&[bb, din], &mut rng);
        let wt = rand_tensor(&[dout, din], &mut rng);
        let bias = rand_tensor(&[dout], &mut rng);
        let target = rand_tensor(&[bb, dout], &mut rng);
        let r = central_diff_check(
            &[x, wt, bias],
            |tape, ids| {
                let t = tape.constant(target.clone());
                let y = tape.linear(ids[0], ids[1], ids[2]).unwrap();
                let a = tape.relu(y);
                tape.mse_loss(a, t).unwrap()
            },
            1e-5,
            3,
            &mut rng,
        );
        worst_ops = worst_ops.max(r.max_rel_err);

        // dropout (deterministic mask per rebuild) through sum
        let x = rand_tensor(&[6, 5], &mut rng);
        let mask_seed = 7000 + trial as u64;
        let r = central_diff_check(
            &[x],
            |tape, ids| {
                let mut drop_rng = RngStream::new(mask_seed, purpose::DROPOUT, 0);
                let d = tape.dropout(ids[0], 0.3, &mut drop_rng, true).unwrap();
                tape.sum(d)
            },
            1e-5,
            4,
            &mut rng,
        );
        worst_ops = worst_ops.max(r.max_rel_err);

        // gaussian NLL + channel ops
        let pred = rand_tensor(&[1, 4, 3, 3], &mut rng);
        let logvar = rand_tensor(&[1, 2, 3, 3], &mut rng);
        let target = rand_tensor(&[1, 4, 3, 3], &mut rng);
        let r = central_diff_check(
            &[pred, logvar],
            |tape, ids| {
                let t = tape.constant(target.clone());
                tape.gaussian_nll_loss(ids[0], ids[1], t).unwrap()
            },
            1e-5,
            4,
            &mut rng,
        );
        worst_ops = worst_ops.max(r.max_rel_err);

        let x = rand_tensor(&[1, 4, 3, 3], &mut rng);
        let r = central_diff_check(
            &[x],
            |tape, ids| {
                let s = tape.slice_channels(ids[0], 1, 2).unwrap();
                let a = tape.avg_channel_pairs(ids[0]).unwrap();
                let ssum = tape.sum(s);
                let asum = tape.sum(a);
                tape.add(ssum, asum).unwrap()
            },
            1e-5,
            4,
            &mut rng,
        );
        worst_ops = worst_ops.max(r.max_rel_err);
    }
    assert!(
        worst_ops < 1e-4,
        "per-op gradients: worst rel err {worst_ops}"
    );

    // end-to-end: 5-iteration unrolled MSE loss on an 8x8, P = 2, single-coil
    // instance, dropout active, 100 randomized trials
    let (p, h, w) = (2usize, 8usize, 8usize);
    let coils = Array3::from_elem((1, h, w), Complex::new(1.0f64, 0.0));
    let masks = make_mask_set(h, p, 2.0, 0.2, 11).unwrap();
    let acq = Arc::new(AcquisitionModel::new(coils, masks).unwrap());
    let truth = rand_image(p, h, w, &mut rng);
    let y = Arc::new(acq.forward(&truth).unwrap());
    let zf = acq.adjoint(&y).unwrap();
    let mut cfg = UnrolledConfig::new(p);
    cfg.denoiser.hidden_channels = 4;
    let x0_val = to_channel_tensor(&[&zf]);
    let target = to_channel_tensor(&[&truth]);
    let dc = DcOp {
        acq: Arc::clone(&acq),
        ys: vec![Arc::clone(&y)],
    };
    let mut worst_e2e = 0.0f64;
    for trial in 0..100u64 {
        let model = UnrolledModel::<f64>::init(cfg.clone(), 500 + trial);
        let params: Vec<Tensor<f64>> = model.flat_params().into_iter().cloned().collect();
        let r = central_diff_check(
            &params,
            |tape, ids| {
                let x0 = tape.constant(x0_val.clone());
                let t = tape.constant(target.clone());
                let mut drop_rng = RngStream::new(900 + trial, purpose::DROPOUT, 0);
                let (out, _) =
                    unrolled_graph(tape, &cfg, ids, x0, &|_| Box::new(dc.clone()), &mut drop_rng, true)
                        .unwrap();
                tape.mse_loss(out, t).unwrap()
            },
            1e-5,
            1,
            &mut rng,
        );
        worst_e2e = worst_e2e.max(r.max_rel_err);
    }
    assert!(worst_e2e < 1e-3, "end-to-end gradient: worst rel err {worst_e2e}");

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 120.0, "gradient suite took {secs:.1}s (budget 120s)");
    println!(
        "[PASS] criterion 1: gradient suite, {trials} trials/op (worst {worst_ops:.2e}) + 100 end-to-end trials (worst {worst_e2e:.2e}) in {secs:.1}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 2: operator suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_operator_suite() {
    let t0 = Instant::now();
    let mut rng = RngStream::new(202, "acceptance-op", 0);
    let (c, p, h, w) = (3usize, 2usize, 16usize, 12usize);
    let coils64 = physics::make_coil_maps(c, h, w, 3).unwrap();
    let masks = make_mask_set(h, p, 3.0, 0.1, 3).unwrap();
    let acq = AcquisitionModel::new(coils64, masks).unwrap();

    let mut worst_adjoint = 0.0f64;
    for _ in 0..100 {
        let x = rand_image(p, h, w, &mut rng);
        let yr = Array4::from_shape_fn((c, p, h, w), |_| {
            Complex::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0))
        });
        let ax = acq.forward(&x).unwrap();
        let aty = acq.adjoint(&yr).unwrap();
        let lhs: Complex<f64> = ax.iter().zip(yr.iter()).map(|(a, b)| a * b.conj()).sum();
        let rhs: Complex<f64> = x.iter().zip(aty.iter()).map(|(a, b)| a * b.conj()).sum();
        worst_adjoint = worst_adjoint.max((lhs - rhs).norm() / lhs.norm().max(1e-12));
    }
    assert!(worst_adjoint < 1e-6, "adjoint identity rel err {worst_adjoint}");

    // fft2c unitarity + round trip
    let mut worst_parseval = 0.0f64;
    for _ in 0..100 {
        let img = rand_image(1, h, w, &mut rng);
        let img2 = img.index_axis(ndarray::Axis(0), 0).to_owned();
        let k = fft2c(&img2);
        let ni: f64 = img2.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let nk: f64 = k.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        worst_parseval = worst_parseval.max((ni - nk).abs() / ni);
    }
    assert!(worst_parseval < 1e-6, "Parseval rel err {worst_parseval}");

    // dc fixed point on a data-consistent image
    let truth = rand_image(p, h, w, &mut rng);
    let y = acq.forward(&truth).unwrap();
    let fixed = acq.dc(&truth, &y).unwrap();
    let fp_err: f64 = fixed
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(fp_err < 1e-6, "dc fixed point err {fp_err}");

    // single-coil hard replacement + idempotence
    let coils1 = Array3::from_elem((1, h, h), Complex::new(1.0f64, 0.0));
    let masks1 = make_mask_set(h, 1, 4.0, 0.1, 5).unwrap();
    let acq1 = AcquisitionModel::new(coils1, masks1).unwrap();
    let truth1 = rand_image(1, h, h, &mut rng);
    let y1 = acq1.forward(&truth1).unwrap();
    let est = rand_image(1, h, h, &mut rng);
    let out = acq1.dc(&est, &y1).unwrap();
    let k = fft2c(&out.index_axis(ndarray::Axis(0), 0).to_owned());
    for i in 0..h {
        if acq1.masks.lines[[0, i]] {
            for j in 0..h {
                assert!(
                    (k[[i, j]] - y1[[0, 0, i, j]]).norm() < 1e-9,
                    "sampled line not replaced exactly"
                );
            }
        }
    }
    let twice = acq1.dc(&out, &y1).unwrap();
    let idem: f64 = twice
        .iter()
        .zip(out.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(idem < 1e-6, "dc idempotence err {idem}");

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 60.0, "operator suite took {secs:.1}s (budget 60s)");
    println!(
        "[PASS] criterion 2: operator suite, 100 adjoint trials (worst {worst_adjoint:.2e}), unitarity (worst {worst_parseval:.2e}), dc fixed-point/consistency in {secs:.1}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 3: oracle suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_oracle_suite() {
    let t0 = Instant::now();
    let t2_preset = physics::SequencePreset::t2prep_default();
    let mut worst_t2 = 0.0f64;
    for k in 0..50 {
        let t2 = 40.0 + (250.0 - 40.0) * k as f64 / 49.0;
        let signals: Vec<f64> = t2_preset
            .timings_ms
            .iter()
            .map(|&te| physics::t2prep_signal(0.85, t2, te).unwrap())
            .collect();
        let fit = lsq_fit_t2(&signals, &t2_preset.timings_ms).unwrap();
        worst_t2 = worst_t2.max((fit.t2_ms - t2).abs() / t2);
    }
    assert!(worst_t2 < 1e-6, "T2 recovery rel err {worst_t2}");

    let t1_preset = physics::SequencePreset::molli_default();
    let mut worst_t1 = 0.0f64;
    for k in 0..50 {
        let t1 = 300.0 + (2000.0 - 300.0) * k as f64 / 49.0;
        let signals: Vec<f64> = t1_preset
            .timings_ms
            .iter()
            .map(|&ti| physics::molli_signal(1.0, 2.0, t1, ti).unwrap())
            .collect();
        let fit = lsq_fit_t1_molli(&signals, &t1_preset.timings_ms).unwrap();
        worst_t1 = worst_t1.max((fit.t1_ms - t1).abs() / t1);
    }
    assert!(worst_t1 < 1e-6, "T1 recovery rel err {worst_t1}");

    // two-point closed form is exact
    let fit = lsq_fit_t2(&[1.0, (-1.0f64).exp()], &[0.0, 100.0]).unwrap();
    assert!((fit.t2_ms - 100.0).abs() < 1e-10 && (fit.pd - 1.0).abs() < 1e-12);

    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 60.0, "oracle suite took {secs:.1}s (budget 60s)");
    println!(
        "[PASS] criterion 3: oracle suite, 50-point grids (T2 worst {worst_t2:.2e}, T1 worst {worst_t1:.2e}), two-point case exact, in {secs:.1}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 4: predictive mean / uncertainty suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_mc_uncertainty_suite() {
    let t0 = Instant::now();
    let mut rng = RngStream::new(404, "acceptance-mc", 0);
    let (c, p, h, w) = (2usize, 2usize, 12usize, 12usize);
    let coils64 = physics::make_coil_maps(c, h, w, 9).unwrap();
    let masks = make_mask_set(h, p, 2.0, 0.1, 9).unwrap();
    let acq = Arc::new(AcquisitionModel::new(coils64, masks).unwrap());
    let truth = rand_image(p, h, w, &mut rng);
    let y = Arc::new(acq.forward(&truth).unwrap());
    let zf = acq.adjoint(&y).unwrap();

    // p = 0: sigma identically zero, mean bit-equal to the deterministic pass
    let mut cfg = UnrolledConfig::new(p);
    cfg.iterations = 2;
    cfg.denoiser.hidden_channels = 8;
    cfg.denoiser.dropout_p = 0.0;
    let model0 = UnrolledModel::<f64>::init(cfg.clone(), 1);
    let (mean0, sigma0) =
        mc_sample(&model0, &zf, &acq, &y, &McConfig { samples: 7, seed: 2 }).unwrap();
    let (det, _) = deterministic_forward(&model0, &zf, &acq, &y).unwrap();
    assert_eq!(mean0, det, "p = 0 mean must bit-equal the deterministic pass");
    assert!(sigma0.iter().all(|&v| v == 0.0), "p = 0 sigma must vanish");

    // T = 1: sigma identically zero with dropout active
    let mut cfg1 = cfg.clone();
    cfg1.denoiser.dropout_p = 0.3;
    let model1 = UnrolledModel::<f64>::init(cfg1, 1);
    let (_, sigma1) =
        mc_sample(&model1, &zf, &acq, &y, &McConfig { samples: 1, seed: 2 }).unwrap();
    assert!(sigma1.iter().all(|&v| v == 0.0), "T = 1 sigma must vanish");

    // streaming mean/sigma equal the stored-sample oracle within 1e-6
    let mc = McConfig {
        samples: 50,
        seed: 5,
    };
    let (mean, sigma) = mc_sample(&model1, &zf, &acq, &y, &mc).unwrap();
    let stored = mc_outputs(&model1, &zf, &acq, &y, &mc).unwrap();
    let t = stored.len() as f64;
    let mut mean_ref = Array3::from_elem(zf.dim(), Complex::new(0.0, 0.0));
    for (img, _) in &stored {
        for (m, v) in mean_ref.iter_mut().zip(img.iter()) {
            *m += v / t;
        }
    }
    let mut worst = 0.0f64;
    for (a, b) in mean.iter().zip(mean_ref.iter()) {
        worst = worst.max((a - b).norm() / b.norm().max(1e-9));
    }
    for ((s, m), px) in sigma.iter().zip(mean_ref.iter()).zip(0..) {
        let (pi, rest) = (px / (h * w), px % (h * w));
        let (i, j) = (rest / w, rest % w);
        let var: f64 = stored
            .iter()
            .map(|(img, _)| (img[[pi, i, j]] - m).norm_sqr())
            .sum::<f64>()
            / t;
        let s_ref = var.sqrt();
        worst = worst.max((s - s_ref).abs() / s_ref.max(1e-9));
    }
    assert!(worst < 1e-6, "streaming vs stored oracle rel err {worst}");

    let secs = t0.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 4: MC mean/sigma suite (p=0 bit-equal, T=1 zero, streaming vs stored worst {worst:.2e}) in {secs:.1}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 5: mask suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_mask_suite() {
    let t0 = Instant::now();
    let n = 160usize;
    for &accel in &[6.0f64, 8.0, 10.0] {
        for &acs in &[0.06f64, 0.08] {
            let expected = sampled_lines(n, accel);
            let acs_block = acs_range(n, acs);
            let set = make_mask_set(n, 8, accel, acs, 33).unwrap();
            for pi in 0..8 {
                assert_eq!(
                    set.sampled_count(pi),
                    expected,
                    "R={accel} acs={acs} phase {pi}: line count"
                );
                assert!(
                    acs_block.clone().all(|i| set.lines[[pi, i]]),
                    "R={accel} acs={acs}: ACS block not fully sampled"
                );
            }
            // per-phase masks differ (with overwhelming probability)
            let mut distinct = false;
            for a in 0..8 {
                for b in a + 1..8 {
                    if set.lines.row(a) != set.lines.row(b) {
                        distinct = true;
                    }
                }
            }
            assert!(distinct, "R={accel}: phase masks are all identical");
            // seed-reproducible
            let again = make_mask_set(n, 8, accel, acs, 33).unwrap();
            assert_eq!(set, again);
        }
    }
    // reference counts from the N = 160 settings
    assert_eq!(sampled_lines(160, 8.0), 20);
    assert_eq!(acs_range(160, 0.06), 75..85);
    assert_eq!(sampled_lines(160, 6.0), 27);
    assert_eq!(sampled_lines(160, 10.0), 16);
    assert_eq!(acs_range(160, 0.08).len(), 13);

    // cardinality and containment across the supported grid
    for &n in &[32usize, 64, 96, 160, 256] {
        for accel in 1..=12 {
            let accel = accel as f64;
            let acs = 0.06;
            let budget = sampled_lines(n, accel);
            let block = acs_range(n, acs);
            match make_mask(n, accel, acs, 0, 7) {
                Ok(m) => {
                    assert_eq!(m.iter().filter(|&&v| v).count(), budget, "N={n} R={accel}");
                    assert!(block.clone().all(|i| m[i]), "N={n} R={accel}: ACS containment");
                }
                Err(_) => {
                    assert!(block.len() > budget, "N={n} R={accel}: spurious rejection");
                }
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    println!("[PASS] criterion 5: mask suite (reference counts, ACS containment, phase independence, grid) in {secs:.1}s");
}

// ---------------------------------------------------------------------------
// criterion 6: metric suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_metric_suite() {
    let t0 = Instant::now();
    let x = Array2::from_shape_fn((24, 24), |(i, j)| 1.0 + ((i * 5 + j * 3) % 17) as f64);
    let mask = Array2::from_elem((24, 24), true);
    assert_eq!(nrmse(&x, &x, &mask).unwrap(), 0.0);
    let zero = Array2::zeros((24, 24));
    assert!((nrmse(&zero, &x, &mask).unwrap() - 1.0).abs() < 1e-12);
    assert!((ssim(&x, &x, &mask, None).unwrap() - 1.0).abs() < 1e-12);

    // SSIM uniform-shift closed form on a constant-statistics region
    let r = 10.0;
    let l = 4.0;
    let c = l / 10.0;
    let reference = Array2::from_elem((32, 32), r);
    let est = Array2::from_elem((32, 32), r + c);
    let interior =
        Array2::from_shape_fn((32, 32), |(i, j)| (6..26).contains(&i) && (6..26).contains(&j));
    let got = ssim(&est, &reference, &interior, Some(l)).unwrap();
    let c1 = (0.01 * l) * (0.01 * l);
    let expect = (2.0 * r * (r + c) + c1) / (r * r + (r + c) * (r + c) + c1);
    assert!(
        (got - expect).abs() / expect < 1e-6,
        "ssim shift case {got} vs closed form {expect}"
    );
    let secs = t0.elapsed().as_secs_f64();
    println!("[PASS] criterion 6: metric suite (nrmse identities, ssim identity + shift oracle {got:.6}) in {secs:.1}s");
}

// ---------------------------------------------------------------------------
// criterion 7: directional end-to-end at desk scale
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_directional_end_to_end() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::desk();
    assert_eq!(
        (cfg.phantom.height, cfg.sequence.timings_ms.len(), cfg.sampling.coils, cfg.sampling.accel, cfg.recon.mc_samples, cfg.seeds.len()),
        (64, 8, 4, 4, 20, 3),
        "desk configuration drifted"
    );
    let out = tempfile::tempdir().unwrap();
    let report = directional_study(&cfg, out.path()).unwrap();
    for s in &report.seeds {
        assert_eq!(
            s.stage1_hash_puq, s.stage1_hash_wog,
            "seed {}: stage-1 artifacts differ between the guided and unguided variants",
            s.seed
        );
        println!(
            "  seed {}: guided {:.4} unguided {:.4} zero-filled {:.4}",
            s.seed, s.puq_nrmse, s.wog_nrmse, s.zf_nrmse
        );
    }
    assert!(
        report.mean_puq_nrmse <= report.mean_wog_nrmse,
        "mean NRMSE guided {:.4} must not exceed unguided {:.4}",
        report.mean_puq_nrmse,
        report.mean_wog_nrmse
    );
    assert!(
        report.mean_puq_nrmse <= 0.8 * report.mean_zf_nrmse,
        "guided {:.4} must beat zero-filled {:.4} by at least 20%",
        report.mean_puq_nrmse,
        report.mean_zf_nrmse
    );
    assert!(
        report.mean_wog_nrmse <= 0.8 * report.mean_zf_nrmse,
        "unguided {:.4} must beat zero-filled {:.4} by at least 20%",
        report.mean_wog_nrmse,
        report.mean_zf_nrmse
    );
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 1800.0, "directional study took {secs:.0}s (budget 30 min)");
    println!(
        "[PASS] criterion 7: directional end-to-end, mean NRMSE guided {:.4} <= unguided {:.4}, zero-filled {:.4}, stage-1 hashes identical, in {:.0}s",
        report.mean_puq_nrmse, report.mean_wog_nrmse, report.mean_zf_nrmse, secs
    );
}

// ---------------------------------------------------------------------------
// criterion 8: ablation harness
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_ablation_harness() {
    let t0 = Instant::now();
    // desk-family configuration shrunk to keep nine trainings tractable
    let mut cfg = ExperimentConfig::desk();
    cfg.phantom.height = 48;
    cfg.phantom.width = 48;
    cfg.phantom.count = 8; // 6 train / 1 val / 1 test
    cfg.recon.epochs = 30;
    cfg.recon.mc_samples = 10;
    let out = tempfile::tempdir().unwrap();
    let table = run_ablation(&cfg, out.path()).unwrap();
    print!("{table}");

    assert_eq!(table.rows.len(), 7, "expected all seven ablation rows");
    let expected: Vec<&str> = Variant::ablation_rows().iter().map(|v| v.slug()).collect();
    let got: Vec<&str> = table.rows.iter().map(|r| r.variant.slug()).collect();
    assert_eq!(got, expected, "ablation row order");
    for row in &table.rows {
        let n = table
            .records
            .iter()
            .filter(|r| r.variant == row.variant.slug())
            .count();
        assert!(n >= 3, "variant {} has {n} repeats (need >= 3)", row.variant.slug());
        assert!(row.nrmse_mean.is_finite() && row.nrmse_std.is_finite());
    }
    let nll_g = table
        .rows
        .iter()
        .find(|r| r.variant == Variant::NllG)
        .unwrap();
    let nll_wog = table
        .rows
        .iter()
        .find(|r| r.variant == Variant::NllWoG)
        .unwrap();
    assert!(
        nll_g.nrmse_mean <= nll_wog.nrmse_mean,
        "NLL guided mean NRMSE {:.4} must not exceed unguided {:.4}",
        nll_g.nrmse_mean,
        nll_wog.nrmse_mean
    );
    let secs = t0.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 8: ablation harness, 7 rows x {} repeats, NLL guided {:.4} <= unguided {:.4}, in {:.0}s",
        cfg.seeds.len(),
        nll_g.nrmse_mean,
        nll_wog.nrmse_mean,
        secs
    );
}

// ---------------------------------------------------------------------------
// criterion 9: bit-exact reproducibility
// ---------------------------------------------------------------------------

fn collect_files(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_9_reproducibility() {
    let t0 = Instant::now();
    let mut cfg = ExperimentConfig::desk();
    cfg.phantom.height = 32;
    cfg.phantom.width = 32;
    cfg.phantom.count = 4;
    cfg.phantom.split = [0.5, 0.25, 0.25];
    cfg.sampling.coils = 2;
    cfg.sampling.accel = 2;
    cfg.sampling.acs_frac = 0.1;
    cfg.sequence.timings_ms = vec![0.0, 25.0, 45.0, 85.0];
    cfg.recon.hidden_channels = 8;
    cfg.recon.epochs = 4;
    cfg.recon.mc_samples = 4;
    cfg.fit.epochs = 20;
    cfg.seeds = vec![7];
    cfg.repeats = 1;
    cfg.variant = Variant::Puq;

    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    let rec_a = run_pipeline(&cfg, out_a.path()).unwrap();
    let rec_b = run_pipeline(&cfg, out_b.path()).unwrap();
    assert_eq!(rec_a.len(), rec_b.len());

    let files_a = collect_files(out_a.path());
    let files_b = collect_files(out_b.path());
    assert_eq!(files_a, files_b, "artifact file sets differ");
    assert!(
        files_a.iter().any(|f| f.extension().is_some_and(|e| e == "tnsr")),
        "no tensors persisted"
    );
    let mut compared = 0usize;
    for rel in &files_a {
        let a = std::fs::read(out_a.path().join(rel)).unwrap();
        let b = std::fs::read(out_b.path().join(rel)).unwrap();
        assert_eq!(a, b, "artifact {} differs between identical runs", rel.display());
        compared += 1;
    }
    let csv_a = read_metrics_csv(&out_a.path().join("metrics.csv")).unwrap();
    let csv_b = read_metrics_csv(&out_b.path().join("metrics.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "metrics csv differs");

    let secs = t0.elapsed().as_secs_f64();
    println!(
        "[PASS] criterion 9: reproducibility, {compared} persisted files bit-identical across identical-seed runs, in {secs:.1}s"
    );
}
