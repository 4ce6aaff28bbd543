//! End-to-end experiment orchestration: phantom generation through metrics,
//! the ablation table, the hyperparameter sweeps and the directional
//! comparison study.
//!
//! Every cell is deterministic in `(config, seed)`: phantoms, masks, noise,
//! weight init, dropout, shuffling and Monte Carlo passes each derive their
//! own purpose-tagged streams, so independent reruns reproduce identical
//! artifacts bit for bit.

use ndarray::{Array2, Array3, Array4};
use num_complex::Complex;
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

use super::config::{ExperimentConfig, PresetKind, Stage1Kind, Variant};
use super::metrics::{self, MetricsRecord};
use super::tensor_file::{self, TensorFile, TensorPayload};
use crate::diffnum::rng::RngStream;
use crate::fitting::{
    self, build_fit_dataset, combine_uncertainty_nll_md, lsq_param_map, predict_fit_mlp,
    train_fit_mlp, FitDataset, MlpConfig, ParameterMap, TrainedMlp,
};
use crate::kspace::{add_noise, make_mask_set, AcquisitionModel};
use crate::physics::{self, Phantom, SequencePreset};
use crate::recon::{
    deterministic_forward, mc_outputs, mc_sample, train_recon, train_recon_nll, McConfig,
    ReconDataset, ReconLoss, ReconSample, ReconTrainConfig, TrainedRecon, UnrolledConfig,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage}: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
}

fn stage<E: std::fmt::Display>(name: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage: name,
        message: e.to_string(),
    }
}

/// Derive a child seed for an independent sub-process (MC draws per image,
/// the fit stage, ...).
pub fn sub_seed(seed: u64, tag: &str, index: u64) -> u64 {
    RngStream::new(seed, tag, index).next_u64()
}

/// One synthetic slice with everything the pipeline needs.
pub struct ImageCase {
    pub index: usize,
    pub phantom: Phantom,
    pub gt_param: ParameterMap,
    /// Noiseless complex ground truth (the training target).
    pub clean: Array3<Complex<f32>>,
    pub y: Arc<Array4<Complex<f32>>>,
    pub zero_filled: Array3<Complex<f32>>,
}

/// All data for one seed: shared acquisition model and the phantom splits.
pub struct SeedData {
    pub seed: u64,
    pub preset: SequencePreset,
    pub acq: Arc<AcquisitionModel<f32>>,
    pub train: Vec<ImageCase>,
    pub val: Vec<ImageCase>,
    pub test: Vec<ImageCase>,
}

fn gt_param_map(phantom: &Phantom, kind: fitting::ParamKind) -> ParameterMap {
    let source = match kind {
        fitting::ParamKind::T2 => &phantom.t2_ms,
        fitting::ParamKind::T1 => &phantom.t1_ms,
    };
    let values = Array2::from_shape_fn(source.dim(), |(i, j)| {
        if phantom.foreground[[i, j]] {
            source[[i, j]]
        } else {
            0.0
        }
    });
    ParameterMap {
        values,
        foreground: phantom.foreground.clone(),
    }
}

/// Phantoms, simulation, coil maps, masks, noisy acquisition and zero-filled
/// reconstructions for one seed.
pub fn prepare_seed_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData, PipelineError> {
    cfg.validate().map_err(stage("config"))?;
    let (h, w) = (cfg.phantom.height, cfg.phantom.width);
    let preset = cfg.sequence.preset();
    let p = preset.phases();
    let kind = cfg.param_kind();

    let coils64 = physics::make_coil_maps(cfg.sampling.coils, h, w, seed).map_err(stage("coils"))?;
    let coils = coils64.mapv(|v| Complex::new(v.re as f32, v.im as f32));
    let masks = make_mask_set(h, p, cfg.sampling.accel as f64, cfg.sampling.acs_frac, seed)
        .map_err(stage("masks"))?;
    let acq = Arc::new(AcquisitionModel::new(coils, masks).map_err(stage("masks"))?);

    let ranges = cfg.phantom.ranges();
    let mut cases = Vec::with_capacity(cfg.phantom.count);
    for index in 0..cfg.phantom.count {
        let spec = physics::PhantomSpec::random(h, w, &ranges, seed, index as u64);
        let phantom = physics::make_phantom(&spec).map_err(stage("phantom"))?;
        let clean64 = physics::simulate_phases(&phantom, &preset, None).map_err(stage("simulate"))?;
        let clean: Array3<Complex<f32>> = physics::cast_complex3(&clean64);
        let mut y = acq.forward(&clean).map_err(stage("acquire"))?;
        if let Some(snr) = cfg.noise.snr {
            let sigma = physics::noise_sigma(&clean64, &phantom.foreground, snr);
            let base = (index * cfg.sampling.coils * p) as u64;
            add_noise(&mut y, &acq.masks, sigma, seed, base);
        }
        let y = Arc::new(y);
        let zero_filled = acq.adjoint(&y).map_err(stage("acquire"))?;
        cases.push(ImageCase {
            index,
            gt_param: gt_param_map(&phantom, kind),
            phantom,
            clean,
            y,
            zero_filled,
        });
    }
    let (n_train, n_val, _) = cfg.split_counts();
    let mut it = cases.into_iter();
    let train: Vec<ImageCase> = it.by_ref().take(n_train).collect();
    let val: Vec<ImageCase> = it.by_ref().take(n_val).collect();
    let test: Vec<ImageCase> = it.collect();
    Ok(SeedData {
        seed,
        preset,
        acq,
        train,
        val,
        test,
    })
}

/// Stage-1 reconstruction plus per-phase uncertainty for one image.
pub struct Stage1Image {
    pub mean: Array3<Complex<f32>>,
    pub sigma: Array3<f32>,
}

/// A trained stage-1 model (absent for the zero-filled baseline).
pub struct Stage1Model {
    pub kind: Stage1Kind,
    pub trained: Option<TrainedRecon<f32>>,
}

fn unrolled_config(cfg: &ExperimentConfig, dropout_p: f64, nll: bool) -> UnrolledConfig {
    let mut ucfg = UnrolledConfig::new(cfg.sequence.timings_ms.len());
    ucfg.iterations = cfg.recon.iterations;
    ucfg.denoiser.hidden_channels = cfg.recon.hidden_channels;
    ucfg.denoiser.dropout_p = dropout_p;
    ucfg.denoiser.nll_head = nll;
    ucfg
}

/// Train stage 1 for the given kind on the training split.
pub fn train_stage1(
    cfg: &ExperimentConfig,
    data: &SeedData,
    kind: Stage1Kind,
) -> Result<Stage1Model, PipelineError> {
    if kind == Stage1Kind::ZeroFilled {
        return Ok(Stage1Model {
            kind,
            trained: None,
        });
    }
    let samples: Vec<ReconSample<f32>> = data
        .train
        .iter()
        .map(|c| ReconSample {
            y: Arc::clone(&c.y),
            zero_filled: c.zero_filled.clone(),
            target: c.clean.clone(),
        })
        .collect();
    let ds = ReconDataset {
        acq: Arc::clone(&data.acq),
        samples,
    };
    let dropout_p = match kind {
        Stage1Kind::MseNoDropout => 0.0,
        _ => cfg.recon.dropout,
    };
    let tcfg = ReconTrainConfig {
        epochs: cfg.recon.epochs,
        batch_size: cfg.recon.batch,
        lr: cfg.recon.lr,
        clip_threshold: cfg.recon.clip,
        seed: data.seed,
        loss: ReconLoss::Mse,
    };
    let trained = match kind {
        Stage1Kind::MseDropout | Stage1Kind::MseNoDropout => {
            let ucfg = unrolled_config(cfg, dropout_p, false);
            train_recon(&ds, &ucfg, &tcfg).map_err(stage("train-recon"))?
        }
        Stage1Kind::Nll | Stage1Kind::NllMd => {
            let ucfg = unrolled_config(cfg, dropout_p, true);
            train_recon_nll(&ds, &ucfg, &tcfg).map_err(stage("train-recon"))?
        }
        Stage1Kind::ZeroFilled => unreachable!(),
    };
    Ok(Stage1Model {
        kind,
        trained: Some(trained),
    })
}

/// Run stage-1 inference for one image under the model's sampling scheme.
pub fn infer_stage1(
    cfg: &ExperimentConfig,
    model: &Stage1Model,
    data: &SeedData,
    case: &ImageCase,
) -> Result<Stage1Image, PipelineError> {
    let zeros = || Array3::from_elem(case.zero_filled.dim(), 0.0f32);
    match model.kind {
        Stage1Kind::ZeroFilled => Ok(Stage1Image {
            mean: case.zero_filled.clone(),
            sigma: zeros(),
        }),
        Stage1Kind::MseDropout => {
            let trained = model.trained.as_ref().expect("trained model");
            let mc = McConfig {
                samples: cfg.recon.mc_samples,
                seed: sub_seed(data.seed, "mc-image", case.index as u64),
            };
            let (mean, sigma) =
                mc_sample(&trained.model, &case.zero_filled, &data.acq, &case.y, &mc)
                    .map_err(stage("mc-sample"))?;
            Ok(Stage1Image { mean, sigma })
        }
        Stage1Kind::MseNoDropout => {
            let trained = model.trained.as_ref().expect("trained model");
            let (mean, _) = deterministic_forward(&trained.model, &case.zero_filled, &data.acq, &case.y)
                .map_err(stage("mc-sample"))?;
            Ok(Stage1Image {
                mean,
                sigma: zeros(),
            })
        }
        Stage1Kind::Nll => {
            let trained = model.trained.as_ref().expect("trained model");
            let (mean, logvar) =
                deterministic_forward(&trained.model, &case.zero_filled, &data.acq, &case.y)
                    .map_err(stage("mc-sample"))?;
            let logvar = logvar.expect("nll head");
            Ok(Stage1Image {
                mean,
                sigma: logvar.mapv(|s| (0.5 * s).exp()),
            })
        }
        Stage1Kind::NllMd => {
            let trained = model.trained.as_ref().expect("trained model");
            let mc = McConfig {
                samples: cfg.recon.mc_samples,
                seed: sub_seed(data.seed, "mc-image", case.index as u64),
            };
            let outputs = mc_outputs(&trained.model, &case.zero_filled, &data.acq, &case.y, &mc)
                .map_err(stage("mc-sample"))?;
            let recons: Vec<Array3<Complex<f32>>> =
                outputs.iter().map(|(x, _)| x.clone()).collect();
            let vars: Vec<Array3<f32>> = outputs
                .iter()
                .map(|(_, lv)| lv.as_ref().expect("nll head").mapv(|s| s.exp()))
                .collect();
            let sigma = combine_uncertainty_nll_md(&recons, &vars).map_err(stage("mc-sample"))?;
            let t = recons.len() as f32;
            let mut mean = Array3::from_elem(case.zero_filled.dim(), Complex::new(0.0f32, 0.0));
            for x in &recons {
                for (m, v) in mean.iter_mut().zip(x.iter()) {
                    *m += Complex::new(v.re / t, v.im / t);
                }
            }
            Ok(Stage1Image { mean, sigma })
        }
    }
}

/// Stage 2 for one variant: train the pixel MLP on the train-split stage-1
/// outputs and predict the test-split parameter maps. The zero-filled
/// baseline fits classically instead.
pub fn fit_stage(
    cfg: &ExperimentConfig,
    data: &SeedData,
    variant: Variant,
    stage1_train: &[Stage1Image],
    stage1_test: &[Stage1Image],
) -> Result<(Vec<ParameterMap>, Option<TrainedMlp<f32>>), PipelineError> {
    let kind = cfg.param_kind();
    if variant == Variant::ZeroFilledLsq {
        let maps = data
            .test
            .iter()
            .map(|case| {
                let mags = case.zero_filled.mapv(|v| v.norm() as f64);
                lsq_param_map(
                    &mags,
                    &data.preset.timings_ms,
                    kind,
                    &case.phantom.foreground,
                )
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(stage("fit"))?;
        return Ok((maps, None));
    }
    let guided = variant.guided();
    let parts: Vec<FitDataset> = data
        .train
        .iter()
        .zip(stage1_train)
        .map(|(case, s1)| {
            build_fit_dataset(
                &s1.mean,
                &s1.sigma,
                &case.gt_param.values,
                &case.phantom.foreground,
                guided,
            )
        })
        .collect::<Result<_, _>>()
        .map_err(stage("train-fit"))?;
    let ds = FitDataset::pool(parts).map_err(stage("train-fit"))?;
    let mut mcfg = MlpConfig::new(
        cfg.sequence.timings_ms.len(),
        guided,
        kind,
        sub_seed(data.seed, "fit", 0),
    );
    mcfg.epochs = cfg.fit.epochs;
    mcfg.lr = cfg.fit.lr;
    mcfg.batch_size = cfg.fit.batch;
    let mlp = train_fit_mlp::<f32>(&ds, &mcfg).map_err(stage("train-fit"))?;
    let maps = data
        .test
        .iter()
        .zip(stage1_test)
        .map(|(case, s1)| {
            predict_fit_mlp(
                &mlp.weights,
                &s1.mean,
                &s1.sigma,
                &case.phantom.foreground,
                guided,
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("predict"))?;
    Ok((maps, Some(mlp)))
}

/// Mean NRMSE and SSIM of predicted maps over the test split.
pub fn evaluate_maps(
    maps: &[ParameterMap],
    tests: &[ImageCase],
) -> Result<(f64, f64), PipelineError> {
    let mut nrmse_acc = 0.0;
    let mut ssim_acc = 0.0;
    for (map, case) in maps.iter().zip(tests) {
        nrmse_acc += metrics::nrmse(&map.values, &case.gt_param.values, &case.gt_param.foreground)
            .map_err(stage("metrics"))?;
        ssim_acc += metrics::ssim(
            &map.values,
            &case.gt_param.values,
            &case.gt_param.foreground,
            None,
        )
        .map_err(stage("metrics"))?;
    }
    let n = maps.len() as f64;
    Ok((nrmse_acc / n, ssim_acc / n))
}

fn masks_tensor(acq: &AcquisitionModel<f32>) -> TensorFile {
    let (p, n) = acq.masks.lines.dim();
    let data: Vec<f32> = acq
        .masks
        .lines
        .iter()
        .map(|&m| if m { 1.0 } else { 0.0 })
        .collect();
    TensorFile {
        shape: vec![p, n],
        payload: TensorPayload::F32(data),
    }
}

fn coils_tensor(acq: &AcquisitionModel<f32>) -> TensorFile {
    let (c, h, w) = acq.coils.dim();
    TensorFile {
        shape: vec![c, h, w],
        payload: TensorPayload::C64(acq.coils.iter().copied().collect()),
    }
}

fn write_loss_curve(path: &Path, curve: &[f64]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,loss")?;
    for (e, l) in curve.iter().enumerate() {
        writeln!(f, "{e},{l}")?;
    }
    Ok(())
}

/// Persist one experiment cell. Stage-1 artifacts (weights, per-test-image
/// mean and sigma) land under the cell directory so they can be hashed and
/// compared across variants.
pub fn persist_cell(
    dir: &Path,
    data: &SeedData,
    model: &Stage1Model,
    stage1_test: &[Stage1Image],
    maps: &[ParameterMap],
    mlp: Option<&TrainedMlp<f32>>,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(stage("persist"))?;
    tensor_file::save_tensor(&dir.join("masks.tnsr"), &masks_tensor(&data.acq))
        .map_err(stage("persist"))?;
    tensor_file::save_tensor(&dir.join("coils.tnsr"), &coils_tensor(&data.acq))
        .map_err(stage("persist"))?;
    if let Some(trained) = &model.trained {
        tensor_file::save_unrolled_weights(&dir.join("recon_weights"), &trained.model)
            .map_err(stage("persist"))?;
        write_loss_curve(&dir.join("recon_loss.csv"), &trained.loss_curve)
            .map_err(stage("persist"))?;
    }
    if let Some(mlp) = mlp {
        tensor_file::save_mlp_weights(&dir.join("mlp_weights"), &mlp.weights)
            .map_err(stage("persist"))?;
        write_loss_curve(&dir.join("fit_loss.csv"), &mlp.loss_curve).map_err(stage("persist"))?;
    }
    for (k, (s1, map)) in stage1_test.iter().zip(maps).enumerate() {
        tensor_file::save_tensor(
            &dir.join(format!("test{k}_mean.tnsr")),
            &TensorFile::from_complex3(&s1.mean),
        )
        .map_err(stage("persist"))?;
        tensor_file::save_tensor(
            &dir.join(format!("test{k}_sigma.tnsr")),
            &TensorFile::from_real3_f32(&s1.sigma),
        )
        .map_err(stage("persist"))?;
        tensor_file::save_tensor(
            &dir.join(format!("test{k}_param.tnsr")),
            &TensorFile::from_map_f64(&map.values),
        )
        .map_err(stage("persist"))?;
        tensor_file::save_tensor(
            &dir.join(format!("test{k}_gt.tnsr")),
            &TensorFile::from_map_f64(&data.test[k].gt_param.values),
        )
        .map_err(stage("persist"))?;
    }
    Ok(())
}

/// SHA-256 over the stage-1 artifacts of a cell directory, in sorted file
/// order: the recon weight files plus every test-image mean/sigma tensor.
pub fn hash_stage1_artifacts(dir: &Path) -> Result<String, PipelineError> {
    let mut files: Vec<PathBuf> = Vec::new();
    let weights_dir = dir.join("recon_weights");
    if weights_dir.is_dir() {
        for entry in std::fs::read_dir(&weights_dir).map_err(stage("hash"))? {
            files.push(entry.map_err(stage("hash"))?.path());
        }
    }
    for entry in std::fs::read_dir(dir).map_err(stage("hash"))? {
        let path = entry.map_err(stage("hash"))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("test") && (name.ends_with("_mean.tnsr") || name.ends_with("_sigma.tnsr")) {
            files.push(path);
        }
    }
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        hasher.update(f.file_name().unwrap().to_string_lossy().as_bytes());
        hasher.update(std::fs::read(&f).map_err(stage("hash"))?);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn record(
    cfg: &ExperimentConfig,
    variant: Variant,
    seed: u64,
    nrmse: f64,
    ssim: f64,
    seconds: f64,
) -> MetricsRecord {
    MetricsRecord {
        variant: variant.slug().to_string(),
        param: cfg.param_kind().label().to_string(),
        accel: cfg.sampling.accel,
        seed,
        nrmse,
        ssim,
        seconds,
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    data: &SeedData,
    variant: Variant,
    out: &Path,
) -> Result<MetricsRecord, PipelineError> {
    let t0 = Instant::now();
    let model = train_stage1(cfg, data, variant.stage1())?;
    let stage1_train = if variant == Variant::ZeroFilledLsq {
        Vec::new()
    } else {
        data.train
            .iter()
            .map(|c| infer_stage1(cfg, &model, data, c))
            .collect::<Result<_, _>>()?
    };
    let stage1_test: Vec<Stage1Image> = data
        .test
        .iter()
        .map(|c| infer_stage1(cfg, &model, data, c))
        .collect::<Result<_, _>>()?;
    let (maps, mlp) = fit_stage(cfg, data, variant, &stage1_train, &stage1_test)?;
    let (nrmse, ssim) = evaluate_maps(&maps, &data.test)?;
    let dir = out.join(variant.slug()).join(format!("seed{}", data.seed));
    persist_cell(&dir, data, &model, &stage1_test, &maps, mlp.as_ref())?;
    Ok(record(
        cfg,
        variant,
        data.seed,
        nrmse,
        ssim,
        t0.elapsed().as_secs_f64(),
    ))
}

/// Full pipeline for the config's variant across its seeds. Persists weights,
/// maps, uncertainty and metrics under `out` and returns one record per seed.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<Vec<MetricsRecord>, PipelineError> {
    cfg.validate().map_err(stage("config"))?;
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let data = prepare_seed_data(cfg, seed)?;
        records.push(run_cell(cfg, &data, cfg.variant, out)?);
    }
    std::fs::create_dir_all(out).map_err(stage("persist"))?;
    metrics::write_metrics_csv(&out.join("metrics.csv"), &records).map_err(stage("persist"))?;
    Ok(records)
}

/// One ablation table row: mean and sample standard deviation over repeats.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub param: String,
    pub nrmse_mean: f64,
    pub nrmse_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub records: Vec<MetricsRecord>,
}

impl std::fmt::Display for AblationTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<14} {:>6} {:>19} {:>19}", "Methods", "param", "NRMSE", "SSIM")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<14} {:>6} {:>9.4} ± {:>6.4} {:>9.4} ± {:>6.4}",
                r.variant.label(),
                r.param,
                r.nrmse_mean,
                r.nrmse_std,
                r.ssim_mean,
                r.ssim_std
            )?;
        }
        Ok(())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// The seven-variant ablation over the config's seeds. Stage-1 training is
/// shared within each seed across the variants that use the same recipe
/// (which also makes their persisted stage-1 artifacts hash-identical), and
/// the table reports mean ± sample std per variant.
pub fn run_ablation(cfg: &ExperimentConfig, out: &Path) -> Result<AblationTable, PipelineError> {
    cfg.validate().map_err(stage("config"))?;
    if cfg.seeds.len() < 2 {
        return Err(PipelineError::Config(
            "ablation needs at least 2 repeats".into(),
        ));
    }
    let variants = Variant::ablation_rows();
    let mut records: Vec<MetricsRecord> = Vec::new();
    for &seed in &cfg.seeds {
        let data = prepare_seed_data(cfg, seed)?;
        // one training per distinct stage-1 recipe
        let mse_drop = train_stage1(cfg, &data, Stage1Kind::MseDropout)?;
        let mse_nodrop = train_stage1(cfg, &data, Stage1Kind::MseNoDropout)?;
        let nll = train_stage1(cfg, &data, Stage1Kind::Nll)?;
        for variant in variants {
            let t0 = Instant::now();
            let base = match variant.stage1() {
                Stage1Kind::MseDropout => &mse_drop,
                Stage1Kind::MseNoDropout => &mse_nodrop,
                Stage1Kind::Nll | Stage1Kind::NllMd => &nll,
                Stage1Kind::ZeroFilled => unreachable!("not an ablation row"),
            };
            // re-wrap so NLL+MD rows sample the shared NLL weights
            let model = Stage1Model {
                kind: variant.stage1(),
                trained: base.trained.as_ref().map(|t| TrainedRecon {
                    model: t.model.clone(),
                    loss_curve: t.loss_curve.clone(),
                }),
            };
            let stage1_train: Vec<Stage1Image> = data
                .train
                .iter()
                .map(|c| infer_stage1(cfg, &model, &data, c))
                .collect::<Result<_, _>>()?;
            let stage1_test: Vec<Stage1Image> = data
                .test
                .iter()
                .map(|c| infer_stage1(cfg, &model, &data, c))
                .collect::<Result<_, _>>()?;
            let (maps, mlp) = fit_stage(cfg, &data, variant, &stage1_train, &stage1_test)?;
            let (nrmse, ssim) = evaluate_maps(&maps, &data.test)?;
            let dir = out.join(variant.slug()).join(format!("seed{seed}"));
            persist_cell(&dir, &data, &model, &stage1_test, &maps, mlp.as_ref())?;
            records.push(record(cfg, variant, seed, nrmse, ssim, t0.elapsed().as_secs_f64()));
        }
    }
    let mut rows = Vec::new();
    for variant in variants {
        let nrmses: Vec<f64> = records
            .iter()
            .filter(|r| r.variant == variant.slug())
            .map(|r| r.nrmse)
            .collect();
        let ssims: Vec<f64> = records
            .iter()
            .filter(|r| r.variant == variant.slug())
            .map(|r| r.ssim)
            .collect();
        let (nm, ns) = mean_std(&nrmses);
        let (sm, ss) = mean_std(&ssims);
        rows.push(AblationRow {
            variant,
            param: cfg.param_kind().label().to_string(),
            nrmse_mean: nm,
            nrmse_std: ns,
            ssim_mean: sm,
            ssim_std: ss,
        });
    }
    std::fs::create_dir_all(out).map_err(stage("persist"))?;
    metrics::write_metrics_csv(&out.join("metrics.csv"), &records).map_err(stage("persist"))?;
    let table = AblationTable { rows, records };
    let mut csv = String::from("variant,param,nrmse_mean,nrmse_std,ssim_mean,ssim_std\n");
    for r in &table.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant.slug(),
            r.param,
            r.nrmse_mean,
            r.nrmse_std,
            r.ssim_mean,
            r.ssim_std
        ));
    }
    std::fs::write(out.join("ablation.csv"), csv).map_err(stage("persist"))?;
    Ok(table)
}

/// Sweep axes with their grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    McSamples,
    Dropout,
    Accel,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mc-samples" => Some(SweepAxis::McSamples),
            "dropout" => Some(SweepAxis::Dropout),
            "accel" => Some(SweepAxis::Accel),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::McSamples => "mc-samples",
            SweepAxis::Dropout => "dropout",
            SweepAxis::Accel => "accel",
        }
    }

    /// Grid values; the desk preset substitutes a lighter acceleration grid.
    pub fn grid(self, preset: PresetKind) -> Vec<f64> {
        match self {
            SweepAxis::McSamples => vec![10.0, 20.0, 50.0, 100.0, 200.0],
            SweepAxis::Dropout => vec![0.2, 0.3, 0.4],
            SweepAxis::Accel => match preset {
                PresetKind::Paper => vec![6.0, 8.0, 10.0],
                PresetKind::Desk => vec![2.0, 4.0, 6.0],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: f64,
    pub variant: String,
    pub param: String,
    pub accel: u32,
    pub seed: u64,
    pub nrmse: f64,
    pub ssim: f64,
}

/// Guided-vs-unguided curves along one hyperparameter axis. Yields
/// `|grid| x 2 x |seeds|` rows; stage-1 training is reused wherever the axis
/// does not affect it (the sample-count axis retrains nothing).
pub fn run_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    out: &Path,
) -> Result<Vec<SweepRow>, PipelineError> {
    cfg.validate().map_err(stage("config"))?;
    let grid = axis.grid(cfg.preset);
    let mut rows = Vec::new();
    match axis {
        SweepAxis::McSamples => {
            for &seed in &cfg.seeds {
                let data = prepare_seed_data(cfg, seed)?;
                let model = train_stage1(cfg, &data, Stage1Kind::MseDropout)?;
                for &value in &grid {
                    let mut vcfg = cfg.clone();
                    vcfg.recon.mc_samples = value as usize;
                    sweep_cell(&vcfg, &data, &model, axis, value, &mut rows)?;
                }
            }
        }
        SweepAxis::Dropout => {
            for &seed in &cfg.seeds {
                let data = prepare_seed_data(cfg, seed)?;
                for &value in &grid {
                    let mut vcfg = cfg.clone();
                    vcfg.recon.dropout = value;
                    let model = train_stage1(&vcfg, &data, Stage1Kind::MseDropout)?;
                    sweep_cell(&vcfg, &data, &model, axis, value, &mut rows)?;
                }
            }
        }
        SweepAxis::Accel => {
            for &value in &grid {
                let mut vcfg = cfg.clone();
                vcfg.sampling.accel = value as u32;
                for &seed in &vcfg.seeds.clone() {
                    let data = prepare_seed_data(&vcfg, seed)?;
                    let model = train_stage1(&vcfg, &data, Stage1Kind::MseDropout)?;
                    sweep_cell(&vcfg, &data, &model, axis, value, &mut rows)?;
                }
            }
        }
    }
    std::fs::create_dir_all(out).map_err(stage("persist"))?;
    let mut csv = String::from("axis,value,variant,param,r,seed,nrmse,ssim\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.axis, r.value, r.variant, r.param, r.accel, r.seed, r.nrmse, r.ssim
        ));
    }
    std::fs::write(out.join("sweep.csv"), csv).map_err(stage("persist"))?;
    Ok(rows)
}

fn sweep_cell(
    cfg: &ExperimentConfig,
    data: &SeedData,
    model: &Stage1Model,
    axis: SweepAxis,
    value: f64,
    rows: &mut Vec<SweepRow>,
) -> Result<(), PipelineError> {
    let stage1_train: Vec<Stage1Image> = data
        .train
        .iter()
        .map(|c| infer_stage1(cfg, model, data, c))
        .collect::<Result<_, _>>()?;
    let stage1_test: Vec<Stage1Image> = data
        .test
        .iter()
        .map(|c| infer_stage1(cfg, model, data, c))
        .collect::<Result<_, _>>()?;
    for variant in [Variant::Puq, Variant::WoG] {
        let (maps, _) = fit_stage(cfg, data, variant, &stage1_train, &stage1_test)?;
        let (nrmse, ssim) = evaluate_maps(&maps, &data.test)?;
        rows.push(SweepRow {
            axis: axis.label(),
            value,
            variant: variant.slug().to_string(),
            param: cfg.param_kind().label().to_string(),
            accel: cfg.sampling.accel,
            seed: data.seed,
            nrmse,
            ssim,
        });
    }
    Ok(())
}

/// Per-seed outcome of the directional comparison.
#[derive(Debug, Clone)]
pub struct DirectionalSeed {
    pub seed: u64,
    pub puq_nrmse: f64,
    pub wog_nrmse: f64,
    pub zf_nrmse: f64,
    pub puq_ssim: f64,
    pub wog_ssim: f64,
    pub stage1_hash_puq: String,
    pub stage1_hash_wog: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct DirectionalReport {
    pub seeds: Vec<DirectionalSeed>,
    pub mean_puq_nrmse: f64,
    pub mean_wog_nrmse: f64,
    pub mean_zf_nrmse: f64,
}

/// The guided-vs-unguided comparison with a zero-filled+LSQ baseline.
///
/// The MSE+dropout stage 1 is trained once per seed and its artifacts are
/// persisted independently into both variant directories; the per-seed
/// hashes attest that both stage-2 paths consumed identical stage-1 outputs.
pub fn directional_study(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<DirectionalReport, PipelineError> {
    cfg.validate().map_err(stage("config"))?;
    let mut seeds = Vec::new();
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let t0 = Instant::now();
        let data = prepare_seed_data(cfg, seed)?;
        let model = train_stage1(cfg, &data, Stage1Kind::MseDropout)?;
        let stage1_train: Vec<Stage1Image> = data
            .train
            .iter()
            .map(|c| infer_stage1(cfg, &model, &data, c))
            .collect::<Result<_, _>>()?;
        let stage1_test: Vec<Stage1Image> = data
            .test
            .iter()
            .map(|c| infer_stage1(cfg, &model, &data, c))
            .collect::<Result<_, _>>()?;

        let mut results = Vec::new();
        for variant in [Variant::Puq, Variant::WoG] {
            let (maps, mlp) = fit_stage(cfg, &data, variant, &stage1_train, &stage1_test)?;
            let (nrmse, ssim) = evaluate_maps(&maps, &data.test)?;
            let dir = out.join(variant.slug()).join(format!("seed{seed}"));
            persist_cell(&dir, &data, &model, &stage1_test, &maps, mlp.as_ref())?;
            let hash = hash_stage1_artifacts(&dir)?;
            records.push(record(cfg, variant, seed, nrmse, ssim, 0.0));
            results.push((nrmse, ssim, hash));
        }
        let (zf_maps, _) = fit_stage(cfg, &data, Variant::ZeroFilledLsq, &[], &[])?;
        let (zf_nrmse, zf_ssim) = evaluate_maps(&zf_maps, &data.test)?;
        records.push(record(cfg, Variant::ZeroFilledLsq, seed, zf_nrmse, zf_ssim, 0.0));

        seeds.push(DirectionalSeed {
            seed,
            puq_nrmse: results[0].0,
            wog_nrmse: results[1].0,
            zf_nrmse,
            puq_ssim: results[0].1,
            wog_ssim: results[1].1,
            stage1_hash_puq: results[0].2.clone(),
            stage1_hash_wog: results[1].2.clone(),
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    std::fs::create_dir_all(out).map_err(stage("persist"))?;
    metrics::write_metrics_csv(&out.join("metrics.csv"), &records).map_err(stage("persist"))?;
    let n = seeds.len() as f64;
    Ok(DirectionalReport {
        mean_puq_nrmse: seeds.iter().map(|s| s.puq_nrmse).sum::<f64>() / n,
        mean_wog_nrmse: seeds.iter().map(|s| s.wog_nrmse).sum::<f64>() / n,
        mean_zf_nrmse: seeds.iter().map(|s| s.zf_nrmse).sum::<f64>() / n,
        seeds,
    })
}
