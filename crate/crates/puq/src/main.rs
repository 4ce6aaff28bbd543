//! Command-line front end: each subcommand is a thin wrapper over the
//! library pipeline stages, sharing the artifact layout of `run_pipeline`
//! (`<out>/<variant>/seed<seed>/...`).

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use puq::fitting::MlpConfig;
use puq::harness::config::{ExperimentConfig, Stage1Kind, Variant};
use puq::harness::export::{export_csv, export_pgm16};
use puq::harness::pipeline::{
    directional_study, fit_stage, infer_stage1, prepare_seed_data, run_ablation, run_pipeline,
    run_sweep, sub_seed, train_stage1, Stage1Image, Stage1Model, SweepAxis,
};
use puq::harness::tensor_file::{
    load_mlp_weights, load_unrolled_weights, save_mlp_weights, save_tensor, save_unrolled_weights,
    TensorFile,
};
use puq::physics;
use puq::recon::{TrainedRecon, UnrolledConfig};

#[derive(Parser)]
#[command(
    name = "puq",
    about = "Uncertainty-guided quantitative MRI reconstruction on synthetic phantoms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file (TOML); defaults to the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base preset when no config file is given: desk or paper.
    #[arg(long, default_value = "desk")]
    preset: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom and export its parameter maps.
    Phantom(Common),
    /// Simulate the multi-phase signal for a phantom.
    Simulate(Common),
    /// Train the stage-1 reconstruction network.
    TrainRecon(Common),
    /// Reconstruct the test split: predictive mean plus uncertainty.
    Reconstruct(Common),
    /// Train the stage-2 pixel-fitting MLP.
    TrainFit(Common),
    /// Predict parameter maps for the test split.
    Fit(Common),
    /// Run the full pipeline for the configured variant and seeds.
    Eval(Common),
    /// Run the seven-variant ablation and print the table.
    Ablate(Common),
    /// Sweep one hyperparameter axis with guided/unguided curves.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axis: mc-samples, dropout or accel.
        #[arg(long)]
        axis: String,
    },
    /// Run the guided-vs-unguided directional comparison.
    Directional(Common),
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => match common.preset.as_str() {
            "desk" => ExperimentConfig::desk(),
            "paper" => ExperimentConfig::paper(),
            other => bail!("unknown preset {other:?} (expected desk or paper)"),
        },
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
        cfg.repeats = 1;
    }
    cfg.validate().context("validating config")?;
    Ok(cfg)
}

fn cell_dir(common: &Common, cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    common
        .out
        .join(cfg.variant.slug())
        .join(format!("seed{seed}"))
}

fn stage1_unrolled_config(cfg: &ExperimentConfig) -> UnrolledConfig {
    let kind = cfg.variant.stage1();
    let mut ucfg = UnrolledConfig::new(cfg.sequence.timings_ms.len());
    ucfg.iterations = cfg.recon.iterations;
    ucfg.denoiser.hidden_channels = cfg.recon.hidden_channels;
    ucfg.denoiser.dropout_p = match kind {
        Stage1Kind::MseNoDropout => 0.0,
        _ => cfg.recon.dropout,
    };
    ucfg.denoiser.nll_head = matches!(kind, Stage1Kind::Nll | Stage1Kind::NllMd);
    ucfg
}

fn load_stage1(common: &Common, cfg: &ExperimentConfig, seed: u64) -> Result<Stage1Model> {
    let kind = cfg.variant.stage1();
    if kind == Stage1Kind::ZeroFilled {
        return Ok(Stage1Model {
            kind,
            trained: None,
        });
    }
    let dir = cell_dir(common, cfg, seed).join("recon_weights");
    let model = load_unrolled_weights::<f32>(&dir, stage1_unrolled_config(cfg))
        .with_context(|| format!("loading stage-1 weights from {} (run train-recon first)", dir.display()))?;
    Ok(Stage1Model {
        kind,
        trained: Some(TrainedRecon {
            model,
            loss_curve: Vec::new(),
        }),
    })
}

fn mlp_config(cfg: &ExperimentConfig, seed: u64) -> MlpConfig {
    let mut mcfg = MlpConfig::new(
        cfg.sequence.timings_ms.len(),
        cfg.guided(),
        cfg.param_kind(),
        sub_seed(seed, "fit", 0),
    );
    mcfg.epochs = cfg.fit.epochs;
    mcfg.lr = cfg.fit.lr;
    mcfg.batch_size = cfg.fit.batch;
    mcfg
}

fn save_map_exports(dir: &Path, name: &str, map: &ndarray::Array2<f64>) -> Result<()> {
    save_tensor(
        &dir.join(format!("{name}.tnsr")),
        &TensorFile::from_map_f64(map),
    )?;
    export_pgm16(map, &dir.join(format!("{name}.pgm")))?;
    export_csv(map, &dir.join(format!("{name}.csv")))?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Phantom(common) => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let spec = physics::PhantomSpec::random(
                cfg.phantom.height,
                cfg.phantom.width,
                &cfg.phantom.ranges(),
                seed,
                0,
            );
            let phantom = physics::make_phantom(&spec)?;
            let dir = common.out.join(format!("phantom_seed{seed}"));
            std::fs::create_dir_all(&dir)?;
            save_map_exports(&dir, "t1_ms", &phantom.t1_ms)?;
            save_map_exports(&dir, "t2_ms", &phantom.t2_ms)?;
            save_map_exports(&dir, "pd", &phantom.pd)?;
            let fg = phantom.foreground.mapv(|b| if b { 1.0 } else { 0.0 });
            save_map_exports(&dir, "foreground", &fg)?;
            let n_fg = phantom.foreground.iter().filter(|&&b| b).count();
            println!(
                "phantom {}x{} with {} regions, {} foreground pixels -> {}",
                cfg.phantom.height,
                cfg.phantom.width,
                spec.regions.len(),
                n_fg,
                dir.display()
            );
        }
        Command::Simulate(common) => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let spec = physics::PhantomSpec::random(
                cfg.phantom.height,
                cfg.phantom.width,
                &cfg.phantom.ranges(),
                seed,
                0,
            );
            let phantom = physics::make_phantom(&spec)?;
            let preset = cfg.sequence.preset();
            let img64 = physics::simulate_phases(&phantom, &preset, None)?;
            let img: ndarray::Array3<num_complex::Complex<f32>> = physics::cast_complex3(&img64);
            let dir = common.out.join(format!("simulate_seed{seed}"));
            std::fs::create_dir_all(&dir)?;
            save_tensor(&dir.join("phases.tnsr"), &TensorFile::from_complex3(&img))?;
            for (pi, &t) in preset.timings_ms.iter().enumerate() {
                let mag = ndarray::Array2::from_shape_fn(
                    (cfg.phantom.height, cfg.phantom.width),
                    |(i, j)| img64[[pi, i, j]].norm(),
                );
                export_pgm16(&mag, &dir.join(format!("phase{pi:02}_t{t:.0}ms.pgm")))?;
            }
            println!(
                "simulated {} phases ({:?}) -> {}",
                preset.phases(),
                cfg.sequence.kind,
                dir.display()
            );
        }
        Command::TrainRecon(common) => {
            let cfg = load_config(&common)?;
            if cfg.variant == Variant::ZeroFilledLsq {
                bail!("variant zero-filled-lsq has no stage-1 network to train");
            }
            for &seed in &cfg.seeds {
                let data = prepare_seed_data(&cfg, seed)?;
                let model = train_stage1(&cfg, &data, cfg.variant.stage1())?;
                let trained = model.trained.as_ref().expect("trained model");
                let dir = cell_dir(&common, &cfg, seed);
                std::fs::create_dir_all(&dir)?;
                save_unrolled_weights(&dir.join("recon_weights"), &trained.model)?;
                let mut csv = String::from("epoch,loss\n");
                for (e, l) in trained.loss_curve.iter().enumerate() {
                    csv.push_str(&format!("{e},{l}\n"));
                }
                std::fs::write(dir.join("recon_loss.csv"), csv)?;
                println!(
                    "seed {seed}: {} epochs, loss {:.6} -> {:.6}; weights in {}",
                    trained.loss_curve.len(),
                    trained.loss_curve.first().unwrap_or(&f64::NAN),
                    trained.loss_curve.last().unwrap_or(&f64::NAN),
                    dir.join("recon_weights").display()
                );
            }
        }
        Command::Reconstruct(common) => {
            let cfg = load_config(&common)?;
            for &seed in &cfg.seeds {
                let data = prepare_seed_data(&cfg, seed)?;
                let model = load_stage1(&common, &cfg, seed)?;
                let dir = cell_dir(&common, &cfg, seed);
                std::fs::create_dir_all(&dir)?;
                for (k, case) in data.test.iter().enumerate() {
                    let s1 = infer_stage1(&cfg, &model, &data, case)?;
                    save_tensor(
                        &dir.join(format!("test{k}_mean.tnsr")),
                        &TensorFile::from_complex3(&s1.mean),
                    )?;
                    save_tensor(
                        &dir.join(format!("test{k}_sigma.tnsr")),
                        &TensorFile::from_real3_f32(&s1.sigma),
                    )?;
                }
                println!(
                    "seed {seed}: wrote mean + sigma for {} test images -> {}",
                    data.test.len(),
                    dir.display()
                );
            }
        }
        Command::TrainFit(common) => {
            let cfg = load_config(&common)?;
            if cfg.variant == Variant::ZeroFilledLsq {
                bail!("variant zero-filled-lsq fits classically; nothing to train");
            }
            for &seed in &cfg.seeds {
                let data = prepare_seed_data(&cfg, seed)?;
                let model = load_stage1(&common, &cfg, seed)?;
                let stage1_train: Vec<Stage1Image> = data
                    .train
                    .iter()
                    .map(|c| infer_stage1(&cfg, &model, &data, c))
                    .collect::<Result<_, _>>()?;
                let parts: Vec<puq::fitting::FitDataset> = data
                    .train
                    .iter()
                    .zip(&stage1_train)
                    .map(|(case, s1)| {
                        puq::fitting::build_fit_dataset(
                            &s1.mean,
                            &s1.sigma,
                            &case.gt_param.values,
                            &case.phantom.foreground,
                            cfg.guided(),
                        )
                    })
                    .collect::<Result<_, _>>()?;
                let ds = puq::fitting::FitDataset::pool(parts)?;
                let mlp = puq::fitting::train_fit_mlp::<f32>(&ds, &mlp_config(&cfg, seed))?;
                let dir = cell_dir(&common, &cfg, seed);
                std::fs::create_dir_all(&dir)?;
                save_mlp_weights(&dir.join("mlp_weights"), &mlp.weights)?;
                println!(
                    "seed {seed}: MLP trained on {} pixels, loss {:.6} -> {:.6}",
                    ds.samples.len(),
                    mlp.loss_curve.first().unwrap_or(&f64::NAN),
                    mlp.loss_curve.last().unwrap_or(&f64::NAN)
                );
            }
        }
        Command::Fit(common) => {
            let cfg = load_config(&common)?;
            for &seed in &cfg.seeds {
                let data = prepare_seed_data(&cfg, seed)?;
                let dir = cell_dir(&common, &cfg, seed);
                std::fs::create_dir_all(&dir)?;
                let maps = if cfg.variant == Variant::ZeroFilledLsq {
                    let (maps, _) = fit_stage(&cfg, &data, cfg.variant, &[], &[])?;
                    maps
                } else {
                    let model = load_stage1(&common, &cfg, seed)?;
                    let stage1_test: Vec<Stage1Image> = data
                        .test
                        .iter()
                        .map(|c| infer_stage1(&cfg, &model, &data, c))
                        .collect::<Result<_, _>>()?;
                    let weights = load_mlp_weights::<f32>(
                        &dir.join("mlp_weights"),
                        mlp_config(&cfg, seed),
                    )
                    .context("loading MLP weights (run train-fit first)")?;
                    data.test
                        .iter()
                        .zip(&stage1_test)
                        .map(|(case, s1)| {
                            puq::fitting::predict_fit_mlp(
                                &weights,
                                &s1.mean,
                                &s1.sigma,
                                &case.phantom.foreground,
                                cfg.guided(),
                            )
                        })
                        .collect::<Result<Vec<_>, _>>()?
                };
                for (k, map) in maps.iter().enumerate() {
                    save_map_exports(&dir, &format!("test{k}_param"), &map.values)?;
                }
                println!(
                    "seed {seed}: wrote {} parameter maps -> {}",
                    maps.len(),
                    dir.display()
                );
            }
        }
        Command::Eval(common) => {
            let cfg = load_config(&common)?;
            let records = run_pipeline(&cfg, &common.out)?;
            println!("variant,param,r,seed,nrmse,ssim,seconds");
            for r in &records {
                println!(
                    "{},{},{},{},{:.6},{:.6},{:.1}",
                    r.variant, r.param, r.accel, r.seed, r.nrmse, r.ssim, r.seconds
                );
            }
            println!("metrics -> {}", common.out.join("metrics.csv").display());
        }
        Command::Ablate(common) => {
            let cfg = load_config(&common)?;
            let table = run_ablation(&cfg, &common.out)?;
            print!("{table}");
            println!("table -> {}", common.out.join("ablation.csv").display());
        }
        Command::Sweep { common, axis } => {
            let cfg = load_config(&common)?;
            let Some(axis) = SweepAxis::parse(&axis) else {
                bail!("unknown axis {axis:?} (expected mc-samples, dropout or accel)");
            };
            let rows = run_sweep(&cfg, axis, &common.out)?;
            println!("axis,value,variant,param,r,seed,nrmse,ssim");
            for r in &rows {
                println!(
                    "{},{},{},{},{},{},{:.6},{:.6}",
                    r.axis, r.value, r.variant, r.param, r.accel, r.seed, r.nrmse, r.ssim
                );
            }
            println!("curves -> {}", common.out.join("sweep.csv").display());
        }
        Command::Directional(common) => {
            let cfg = load_config(&common)?;
            let report = directional_study(&cfg, &common.out)?;
            for s in &report.seeds {
                println!(
                    "seed {}: guided {:.4} unguided {:.4} zero-filled {:.4} (stage-1 hashes match: {})",
                    s.seed,
                    s.puq_nrmse,
                    s.wog_nrmse,
                    s.zf_nrmse,
                    s.stage1_hash_puq == s.stage1_hash_wog
                );
            }
            println!(
                "means: guided {:.4} <= unguided {:.4}: {}",
                report.mean_puq_nrmse,
                report.mean_wog_nrmse,
                report.mean_puq_nrmse <= report.mean_wog_nrmse
            );
        }
    }
    Ok(())
}
