//! Stage 1: unrolled reconstruction with Monte Carlo dropout.
//!
//! Five iterations of CNN denoiser + hard data consistency, trained with MSE
//! (or the heteroscedastic Gaussian NLL for the ablation variants), then
//! sampled T times with dropout active to produce the predictive mean and the
//! phase-wise uncertainty map.
//!
//! Complex multi-phase images enter the network as 2P real channels
//! (`[Re_0..Re_{P-1}, Im_0..Im_{P-1}]`); the data-consistency layer joins the
//! tape as a custom op whose linear part is self-adjoint under the
//! orthonormal FFT, so its backward pass applies the same operator.

use ndarray::{Array3, Array4};
use num_complex::Complex;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

use crate::diffnum::optim::{adam_step, clip_grad_norm, AdamState};
use crate::diffnum::real::Real;
use crate::diffnum::rng::{purpose, RngStream};
use crate::diffnum::tape::{NodeId, Tape, TapeOp};
use crate::diffnum::tensor::{DiffError, Tensor};
use crate::kspace::{AcquisitionModel, KspaceError};

#[derive(Debug, Error)]
pub enum ReconError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Kspace(#[from] KspaceError),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("Monte Carlo sample count must be at least 1, got {0}")]
    BadSampleCount(usize),
    #[error("configuration mismatch: {0}")]
    Config(String),
}

/// CNN denoiser layout: 5 conv layers, 64 hidden channels, 3x3 kernels,
/// ReLU after the first four, dropout on the middle three hidden layers,
/// residual output.
#[derive(Debug, Clone)]
pub struct DenoiserConfig {
    pub conv_layers: usize,
    pub hidden_channels: usize,
    pub dropout_p: f64,
    pub phases: usize,
    pub residual: bool,
    /// Widen the final conv to 4P channels: 2P reconstruction + 2P raw
    /// log-variance (averaged down to P phase log-variances).
    pub nll_head: bool,
}

/// 0-based conv indices whose activations carry dropout: the middle three
/// hidden layers (layers 2-4 of 5 in 1-based counting).
pub const DROPOUT_LAYERS: [usize; 3] = [1, 2, 3];

/// Log-variance head clamp. Keeps `exp(-s)` finite in f32 training; every
/// realistic optimum `s* = ln(residual^2)` lies well inside the interval.
pub const LOGVAR_CLAMP: f64 = 30.0;

impl DenoiserConfig {
    pub fn new(phases: usize) -> Self {
        DenoiserConfig {
            conv_layers: 5,
            hidden_channels: 64,
            dropout_p: 0.3,
            phases,
            residual: true,
            nll_head: false,
        }
    }

    pub fn in_channels(&self) -> usize {
        2 * self.phases
    }

    pub fn out_channels(&self, with_head: bool) -> usize {
        if with_head {
            4 * self.phases
        } else {
            2 * self.phases
        }
    }

    /// (Cin, Cout) of conv layer `l`.
    pub fn layer_dims(&self, l: usize, with_head: bool) -> (usize, usize) {
        let last = self.conv_layers - 1;
        let cin = if l == 0 {
            self.in_channels()
        } else {
            self.hidden_channels
        };
        let cout = if l == last {
            self.out_channels(with_head)
        } else {
            self.hidden_channels
        };
        (cin, cout)
    }

    /// Conv indices followed by a dropout site.
    pub fn dropout_sites(&self) -> Vec<usize> {
        DROPOUT_LAYERS.to_vec()
    }
}

#[derive(Debug, Clone)]
pub struct UnrolledConfig {
    pub iterations: usize,
    pub denoiser: DenoiserConfig,
}

impl UnrolledConfig {
    pub fn new(phases: usize) -> Self {
        UnrolledConfig {
            iterations: 5,
            denoiser: DenoiserConfig::new(phases),
        }
    }

    /// Only the final iteration's denoiser carries the NLL head.
    fn head_at(&self, iteration: usize) -> bool {
        self.denoiser.nll_head && iteration + 1 == self.iterations
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DenoiserWeights<T> {
    pub layers: Vec<ConvLayer<T>>,
}

/// Unshared per-iteration denoiser weights.
#[derive(Debug, Clone)]
pub struct UnrolledWeights<T> {
    pub iterations: Vec<DenoiserWeights<T>>,
}

#[derive(Debug, Clone)]
pub struct UnrolledModel<T: Real> {
    pub cfg: UnrolledConfig,
    pub weights: UnrolledWeights<T>,
}

impl<T: Real> UnrolledModel<T> {
    /// Uniform init in +-sqrt(1/fan_in); every layer draws from its own
    /// `(seed, "init", counter)` stream.
    pub fn init(cfg: UnrolledConfig, seed: u64) -> Self {
        let mut counter = 0u64;
        let mut iterations = Vec::with_capacity(cfg.iterations);
        for it in 0..cfg.iterations {
            let with_head = cfg.head_at(it);
            let mut layers = Vec::with_capacity(cfg.denoiser.conv_layers);
            for l in 0..cfg.denoiser.conv_layers {
                let (cin, cout) = cfg.denoiser.layer_dims(l, with_head);
                let bound = (1.0 / (cin * 9) as f64).sqrt();
                let mut rng = RngStream::new(seed, purpose::INIT, counter);
                counter += 1;
                let weight =
                    Tensor::from_fn(&[cout, cin, 3, 3], || T::of_f64(rng.range(-bound, bound)));
                let bias = Tensor::from_fn(&[cout], || T::of_f64(rng.range(-bound, bound)));
                layers.push(ConvLayer { weight, bias });
            }
            iterations.push(DenoiserWeights { layers });
        }
        UnrolledModel {
            cfg,
            weights: UnrolledWeights { iterations },
        }
    }

    /// Parameters in canonical order: iteration-major, layer-minor, weight
    /// before bias. Shared by init, training, serialization and the
    /// gradient checks.
    pub fn flat_params(&self) -> Vec<&Tensor<T>> {
        self.weights
            .iterations
            .iter()
            .flat_map(|d| d.layers.iter().flat_map(|l| [&l.weight, &l.bias]))
            .collect()
    }

    pub fn flat_params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.weights
            .iterations
            .iter_mut()
            .flat_map(|d| d.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.flat_params().iter().map(|p| p.len()).sum()
    }

    /// Rebuild from tensors in canonical order.
    pub fn from_flat(cfg: UnrolledConfig, tensors: Vec<Tensor<T>>) -> Result<Self, ReconError> {
        let per_iter = cfg.denoiser.conv_layers * 2;
        if tensors.len() != cfg.iterations * per_iter {
            return Err(ReconError::Config(format!(
                "expected {} tensors, got {}",
                cfg.iterations * per_iter,
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut iterations = Vec::with_capacity(cfg.iterations);
        for _ in 0..cfg.iterations {
            let mut layers = Vec::with_capacity(cfg.denoiser.conv_layers);
            for _ in 0..cfg.denoiser.conv_layers {
                let weight = it.next().expect("weight");
                let bias = it.next().expect("bias");
                layers.push(ConvLayer { weight, bias });
            }
            iterations.push(DenoiserWeights { layers });
        }
        Ok(UnrolledModel {
            cfg,
            weights: UnrolledWeights { iterations },
        })
    }

    /// Forward pass of the whole cascade on one image. Returns the
    /// reconstruction and, with an NLL head, the per-phase log-variance of
    /// the final iteration.
    pub fn forward(
        &self,
        x_zf: &Array3<Complex<T>>,
        acq: &Arc<AcquisitionModel<T>>,
        y: &Arc<Array4<Complex<T>>>,
        rng: &mut RngStream,
        dropout_active: bool,
    ) -> Result<(Array3<Complex<T>>, Option<Array3<T>>), ReconError> {
        let mut tape = Tape::new();
        let param_ids: Vec<NodeId> = self
            .flat_params()
            .into_iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let x0 = tape.constant(to_channel_tensor(&[x_zf]));
        let dc = DcOp {
            acq: Arc::clone(acq),
            ys: vec![Arc::clone(y)],
        };
        let (out, logvar) = unrolled_graph(
            &mut tape,
            &self.cfg,
            &param_ids,
            x0,
            &|_| Box::new(dc.clone()),
            rng,
            dropout_active,
        )?;
        let img = from_channel_tensor(tape.value(out), 0);
        let lv = logvar.map(|id| real_from_tensor(tape.value(id), 0));
        Ok((img, lv))
    }
}

/// Batched hard data-consistency layer as a tape op. The forward pass uses
/// the per-item measured k-space; the VJP applies the (self-adjoint) linear
/// part to the cotangent.
#[derive(Clone)]
pub struct DcOp<T: Real> {
    pub acq: Arc<AcquisitionModel<T>>,
    pub ys: Vec<Arc<Array4<Complex<T>>>>,
}

impl<T: Real> TapeOp<T> for DcOp<T> {
    fn name(&self) -> &'static str {
        "dc_layer"
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, DiffError> {
        let b = x.shape()[0];
        if b != self.ys.len() {
            return Err(DiffError::Invalid(format!(
                "dc_layer batch {} does not match {} measurements",
                b,
                self.ys.len()
            )));
        }
        let mut out = Tensor::zeros(x.shape());
        let item_len = x.len() / b;
        for bi in 0..b {
            let img = from_channel_tensor(x, bi);
            let dc = self
                .acq
                .dc(&img, &self.ys[bi])
                .map_err(|e| DiffError::Invalid(e.to_string()))?;
            write_channels(&dc, &mut out.data_mut()[bi * item_len..(bi + 1) * item_len]);
        }
        Ok(out)
    }

    fn backward(&self, gout: &Tensor<T>, _x: &Tensor<T>, _out: &Tensor<T>) -> Tensor<T> {
        let b = gout.shape()[0];
        let mut dx = Tensor::zeros(gout.shape());
        let item_len = gout.len() / b;
        for bi in 0..b {
            let g = from_channel_tensor(gout, bi);
            let lin = self.acq.dc_linear(&g).expect("dc_linear shape");
            write_channels(&lin, &mut dx.data_mut()[bi * item_len..(bi + 1) * item_len]);
        }
        dx
    }
}

/// Stack complex multi-phase images into a `[B, 2P, H, W]` channel tensor.
pub fn to_channel_tensor<T: Real>(batch: &[&Array3<Complex<T>>]) -> Tensor<T> {
    let (p, h, w) = batch[0].dim();
    let hw = h * w;
    let mut t = Tensor::zeros(&[batch.len(), 2 * p, h, w]);
    let data = t.data_mut();
    for (bi, img) in batch.iter().enumerate() {
        let base = bi * 2 * p * hw;
        for pi in 0..p {
            for i in 0..h {
                for j in 0..w {
                    let v = img[[pi, i, j]];
                    data[base + pi * hw + i * w + j] = v.re;
                    data[base + (p + pi) * hw + i * w + j] = v.im;
                }
            }
        }
    }
    t
}

fn write_channels<T: Real>(img: &Array3<Complex<T>>, out: &mut [T]) {
    let (p, h, w) = img.dim();
    let hw = h * w;
    for pi in 0..p {
        for i in 0..h {
            for j in 0..w {
                let v = img[[pi, i, j]];
                out[pi * hw + i * w + j] = v.re;
                out[(p + pi) * hw + i * w + j] = v.im;
            }
        }
    }
}

/// Extract batch item `bi` of a `[B, 2P, H, W]` tensor as a complex stack.
pub fn from_channel_tensor<T: Real>(t: &Tensor<T>, bi: usize) -> Array3<Complex<T>> {
    let s = t.shape();
    let (p2, h, w) = (s[1], s[2], s[3]);
    let p = p2 / 2;
    let hw = h * w;
    let base = bi * p2 * hw;
    let data = t.data();
    Array3::from_shape_fn((p, h, w), |(pi, i, j)| {
        Complex::new(
            data[base + pi * hw + i * w + j],
            data[base + (p + pi) * hw + i * w + j],
        )
    })
}

/// Extract batch item `bi` of a `[B, P, H, W]` tensor as a real stack.
pub fn real_from_tensor<T: Real>(t: &Tensor<T>, bi: usize) -> Array3<T> {
    let s = t.shape();
    let (p, h, w) = (s[1], s[2], s[3]);
    let hw = h * w;
    let base = bi * p * hw;
    Array3::from_shape_fn((p, h, w), |(pi, i, j)| t.data()[base + pi * hw + i * w + j])
}

/// One denoiser on the tape. `weight_ids` are `(weight, bias)` node pairs in
/// layer order. Returns the residual reconstruction and, with a head, the
/// raw 2P log-variance block (pre channel-pair averaging).
pub fn denoiser_graph<T: Real>(
    tape: &mut Tape<T>,
    cfg: &DenoiserConfig,
    with_head: bool,
    weight_ids: &[(NodeId, NodeId)],
    x: NodeId,
    rng: &mut RngStream,
    dropout_active: bool,
) -> Result<(NodeId, Option<NodeId>), ReconError> {
    if weight_ids.len() != cfg.conv_layers {
        return Err(ReconError::Config(format!(
            "denoiser expects {} conv layers, got {}",
            cfg.conv_layers,
            weight_ids.len()
        )));
    }
    let last = cfg.conv_layers - 1;
    let mut h = x;
    for (l, &(w, b)) in weight_ids.iter().enumerate() {
        h = tape.conv2d(h, w, b)?;
        if l < last {
            h = tape.relu(h);
        }
        if DROPOUT_LAYERS.contains(&l) {
            h = tape.dropout(h, cfg.dropout_p, rng, dropout_active)?;
        }
    }
    let (recon_raw, logvar) = if with_head {
        let p2 = cfg.in_channels();
        let r = tape.slice_channels(h, 0, p2)?;
        let s = tape.slice_channels(h, p2, p2)?;
        let s = tape.clamp(s, T::of_f64(-LOGVAR_CLAMP), T::of_f64(LOGVAR_CLAMP));
        (r, Some(s))
    } else {
        (h, None)
    };
    let recon = if cfg.residual {
        tape.add(recon_raw, x)?
    } else {
        recon_raw
    };
    Ok((recon, logvar))
}

/// The full cascade: N times denoiser then data consistency, ending with DC.
/// `param_ids` follow the canonical order of [`UnrolledModel::flat_params`].
/// With an NLL head the returned log-variance is the `[B, P, H, W]`
/// channel-pair average from the final iteration (taken before its DC).
pub fn unrolled_graph<T: Real>(
    tape: &mut Tape<T>,
    cfg: &UnrolledConfig,
    param_ids: &[NodeId],
    x0: NodeId,
    dc_op: &dyn Fn(usize) -> Box<dyn TapeOp<T>>,
    rng: &mut RngStream,
    dropout_active: bool,
) -> Result<(NodeId, Option<NodeId>), ReconError> {
    let per_iter = cfg.denoiser.conv_layers * 2;
    if param_ids.len() != cfg.iterations * per_iter {
        return Err(ReconError::Config(format!(
            "expected {} parameter nodes, got {}",
            cfg.iterations * per_iter,
            param_ids.len()
        )));
    }
    let mut x = x0;
    let mut logvar = None;
    for it in 0..cfg.iterations {
        let ids: Vec<(NodeId, NodeId)> = (0..cfg.denoiser.conv_layers)
            .map(|l| {
                (
                    param_ids[it * per_iter + 2 * l],
                    param_ids[it * per_iter + 2 * l + 1],
                )
            })
            .collect();
        let (denoised, raw_logvar) = denoiser_graph(
            tape,
            &cfg.denoiser,
            cfg.head_at(it),
            &ids,
            x,
            rng,
            dropout_active,
        )?;
        if let Some(raw) = raw_logvar {
            logvar = Some(tape.avg_channel_pairs(raw)?);
        }
        x = tape.custom(denoised, dc_op(it))?;
    }
    Ok((x, logvar))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconLoss {
    Mse,
    GaussianNll,
}

#[derive(Debug, Clone)]
pub struct ReconTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_threshold: f64,
    pub seed: u64,
    pub loss: ReconLoss,
}

impl ReconTrainConfig {
    /// Desk-scale preset: 50 epochs, batch 4.
    pub fn desk(seed: u64) -> Self {
        ReconTrainConfig {
            epochs: 50,
            batch_size: 4,
            lr: 0.01,
            clip_threshold: 0.01,
            seed,
            loss: ReconLoss::Mse,
        }
    }

    /// Full-scale preset: 2000 epochs, batch 32.
    pub fn paper(seed: u64) -> Self {
        ReconTrainConfig {
            epochs: 2000,
            batch_size: 32,
            lr: 0.01,
            clip_threshold: 0.01,
            seed,
            loss: ReconLoss::Mse,
        }
    }
}

/// One training sample: measured k-space, its zero-filled reconstruction and
/// the fully sampled target.
pub struct ReconSample<T: Real> {
    pub y: Arc<Array4<Complex<T>>>,
    pub zero_filled: Array3<Complex<T>>,
    pub target: Array3<Complex<T>>,
}

pub struct ReconDataset<T: Real> {
    pub acq: Arc<AcquisitionModel<T>>,
    pub samples: Vec<ReconSample<T>>,
}

pub struct TrainedRecon<T: Real> {
    pub model: UnrolledModel<T>,
    /// Per-epoch mean training loss.
    pub loss_curve: Vec<f64>,
}

/// Supervised training of the unrolled cascade: Adam, global-norm gradient
/// clipping, dropout active, deterministic shuffling. Aborts on a
/// non-finite loss.
pub fn train_recon<T: Real>(
    ds: &ReconDataset<T>,
    cfg: &UnrolledConfig,
    tcfg: &ReconTrainConfig,
) -> Result<TrainedRecon<T>, ReconError> {
    if ds.samples.is_empty() {
        return Err(ReconError::EmptyDataset);
    }
    if (tcfg.loss == ReconLoss::GaussianNll) != cfg.denoiser.nll_head {
        return Err(ReconError::Config(
            "GaussianNll loss requires nll_head (and vice versa)".into(),
        ));
    }
    let mut model = UnrolledModel::<T>::init(cfg.clone(), tcfg.seed);
    let param_lens: Vec<usize> = model.flat_params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::<T>::new(&param_lens);
    let n = ds.samples.len();
    let mut curve = Vec::with_capacity(tcfg.epochs);
    let mut step: u64 = 0;
    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::new(tcfg.seed, purpose::SHUFFLE, epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(tcfg.batch_size.max(1)).enumerate() {
            let mut tape = Tape::new();
            let param_ids: Vec<NodeId> = model
                .flat_params()
                .into_iter()
                .map(|p| tape.param(p.clone()))
                .collect();
            let zf: Vec<&Array3<Complex<T>>> =
                chunk.iter().map(|&i| &ds.samples[i].zero_filled).collect();
            let tg: Vec<&Array3<Complex<T>>> =
                chunk.iter().map(|&i| &ds.samples[i].target).collect();
            let ys: Vec<Arc<Array4<Complex<T>>>> =
                chunk.iter().map(|&i| Arc::clone(&ds.samples[i].y)).collect();
            let x0 = tape.constant(to_channel_tensor(&zf));
            let target = tape.constant(to_channel_tensor(&tg));
            let dc = DcOp {
                acq: Arc::clone(&ds.acq),
                ys,
            };
            let mut drop_rng = RngStream::new(tcfg.seed, purpose::DROPOUT, step);
            let (out, logvar) = unrolled_graph(
                &mut tape,
                cfg,
                &param_ids,
                x0,
                &|_| Box::new(dc.clone()),
                &mut drop_rng,
                true,
            )?;
            let loss = match tcfg.loss {
                ReconLoss::Mse => tape.mse_loss(out, target)?,
                ReconLoss::GaussianNll => {
                    let lv = logvar.expect("nll head present");
                    tape.gaussian_nll_loss(out, lv, target)?
                }
            };
            let loss_val = tape.value(loss).item().into_f64();
            if !loss_val.is_finite() {
                return Err(ReconError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss_val * chunk.len() as f64;
            tape.backward(loss)?;
            let mut grads: Vec<Tensor<T>> =
                param_ids.iter().map(|&id| tape.grad_tensor(id)).collect();
            clip_grad_norm(&mut grads, tcfg.clip_threshold)?;
            let mut params = model.flat_params_mut();
            adam_step(&mut params, &grads, &mut adam, tcfg.lr)?;
            step += 1;
        }
        curve.push(epoch_loss / n as f64);
    }
    Ok(TrainedRecon {
        model,
        loss_curve: curve,
    })
}

/// NLL-trained variant: same recipe, final denoiser widened with the
/// log-variance head and the Gaussian NLL objective.
pub fn train_recon_nll<T: Real>(
    ds: &ReconDataset<T>,
    cfg: &UnrolledConfig,
    tcfg: &ReconTrainConfig,
) -> Result<TrainedRecon<T>, ReconError> {
    let mut cfg = cfg.clone();
    cfg.denoiser.nll_head = true;
    let mut tcfg = tcfg.clone();
    tcfg.loss = ReconLoss::GaussianNll;
    train_recon(ds, &cfg, &tcfg)
}

#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    /// Number of stochastic forward passes T.
    pub samples: usize,
    pub seed: u64,
}

/// T stochastic passes with dropout kept active; per-pass streams are
/// indexed by t so the passes may run in parallel. Returns the complex
/// predictive mean and the per-phase standard deviation (population
/// convention, deviations taken in complex modulus), accumulated by a
/// single streaming Welford pass in t order.
pub fn mc_sample<T: Real>(
    model: &UnrolledModel<T>,
    x_zf: &Array3<Complex<T>>,
    acq: &Arc<AcquisitionModel<T>>,
    y: &Arc<Array4<Complex<T>>>,
    mc: &McConfig,
) -> Result<(Array3<Complex<T>>, Array3<T>), ReconError> {
    if mc.samples < 1 {
        return Err(ReconError::BadSampleCount(mc.samples));
    }
    let (p, h, w) = x_zf.dim();
    let mut mean = Array3::from_elem((p, h, w), Complex::new(T::zero(), T::zero()));
    let mut m2 = Array3::from_elem((p, h, w), T::zero());
    for t in 0..mc.samples {
        let mut rng = RngStream::new(mc.seed, purpose::MC, t as u64);
        let (img, _) = model.forward(x_zf, acq, y, &mut rng, true)?;
        let k = T::of_f64((t + 1) as f64);
        for ((m, v), x) in mean.iter_mut().zip(m2.iter_mut()).zip(img.iter()) {
            let delta = *x - *m;
            *m += Complex::new(delta.re / k, delta.im / k);
            let delta2 = *x - *m;
            *v += delta.re * delta2.re + delta.im * delta2.im;
        }
    }
    let t_total = T::of_f64(mc.samples as f64);
    let sigma = m2.mapv(|v| (v / t_total).sqrt());
    Ok((mean, sigma))
}

/// The raw per-pass outputs (reconstruction plus optional log-variance),
/// ordered by sample index and computed in parallel. Feeds the NLL+MD
/// uncertainty combination.
pub fn mc_outputs<T: Real>(
    model: &UnrolledModel<T>,
    x_zf: &Array3<Complex<T>>,
    acq: &Arc<AcquisitionModel<T>>,
    y: &Arc<Array4<Complex<T>>>,
    mc: &McConfig,
) -> Result<Vec<(Array3<Complex<T>>, Option<Array3<T>>)>, ReconError> {
    if mc.samples < 1 {
        return Err(ReconError::BadSampleCount(mc.samples));
    }
    (0..mc.samples)
        .into_par_iter()
        .map(|t| {
            let mut rng = RngStream::new(mc.seed, purpose::MC, t as u64);
            model.forward(x_zf, acq, y, &mut rng, true)
        })
        .collect()
}

/// Deterministic single pass (dropout inactive).
pub fn deterministic_forward<T: Real>(
    model: &UnrolledModel<T>,
    x_zf: &Array3<Complex<T>>,
    acq: &Arc<AcquisitionModel<T>>,
    y: &Arc<Array4<Complex<T>>>,
) -> Result<(Array3<Complex<T>>, Option<Array3<T>>), ReconError> {
    let mut rng = RngStream::new(0, purpose::MC, u64::MAX);
    model.forward(x_zf, acq, y, &mut rng, false)
}
