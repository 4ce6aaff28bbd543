//! Stage 2: pixel-wise parameter fitting.
//!
//! Classical least-squares fitters (the ground-truth oracle and the
//! zero-filled baseline), first-phase normalization, the uncertainty-guided
//! MLP regressor and the NLL-based uncertainty combination used by the
//! ablation variants. LSQ numerics run in f64 regardless of the pipeline
//! dtype.

use ndarray::{Array2, Array3};
use num_complex::Complex;
use rayon::prelude::*;
use thiserror::Error;

use crate::diffnum::optim::{adam_step, AdamState};
use crate::diffnum::real::Real;
use crate::diffnum::rng::RngStream;
use crate::diffnum::tape::{NodeId, Tape};
use crate::diffnum::tensor::{DiffError, Tensor};

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("need at least {need} phases, got {got}")]
    TooFewPhases { need: usize, got: usize },
    #[error("signals and timings disagree in length: {signals} vs {timings}")]
    LengthMismatch { signals: usize, timings: usize },
    #[error("signals must be non-negative magnitudes")]
    NegativeSignal,
    #[error("degenerate timing schedule")]
    DegenerateSchedule,
    #[error("foreground mask selects no pixels")]
    EmptyForeground,
    #[error("MLP input width mismatch: weights expect {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("fit dataset has no valid samples")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("uncertainty combination needs at least one sample")]
    NoSamples,
    #[error("sample lists disagree: {0}")]
    SampleMismatch(String),
}

/// Which tissue parameter a map or regressor targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    T1,
    T2,
}

impl ParamKind {
    /// Physical clamp range in milliseconds.
    pub fn clamp_range(self) -> (f64, f64) {
        match self {
            ParamKind::T2 => (1.0, 3000.0),
            ParamKind::T1 => (1.0, 5000.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ParamKind::T1 => "T1",
            ParamKind::T2 => "T2",
        }
    }
}

/// Parameter map in milliseconds; background pixels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMap {
    pub values: Array2<f64>,
    pub foreground: Array2<bool>,
}

#[derive(Debug, Clone, Copy)]
pub struct T2Fit {
    pub pd: f64,
    pub t2_ms: f64,
    pub background: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MolliFit {
    pub a: f64,
    pub b: f64,
    pub t1star_ms: f64,
    pub t1_ms: f64,
    pub background: bool,
}

const POSITIVE_FLOOR: f64 = 1e-12;
const GN_MAX_ITERS: usize = 50;
const GN_STEP_TOL: f64 = 1e-10;

fn validate_signals(signals: &[f64], timings: &[f64], min_phases: usize) -> Result<(), FitError> {
    if signals.len() < min_phases {
        return Err(FitError::TooFewPhases {
            need: min_phases,
            got: signals.len(),
        });
    }
    if signals.len() != timings.len() {
        return Err(FitError::LengthMismatch {
            signals: signals.len(),
            timings: timings.len(),
        });
    }
    if signals.iter().any(|&s| s < 0.0) {
        return Err(FitError::NegativeSignal);
    }
    Ok(())
}

fn solve2(m: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 {
        return None;
    }
    Some([
        (b[0] * m[1][1] - b[1] * m[0][1]) / det,
        (m[0][0] * b[1] - m[1][0] * b[0]) / det,
    ])
}

fn solve3(mut m: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    // Gaussian elimination with partial pivoting on an augmented 3x4 system.
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in 0..3 {
            if row == col {
                continue;
            }
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Mono-exponential T2 fit `S = PD * exp(-TE / T2)`.
///
/// Log-linear closed form on the positive samples seeds a Gauss-Newton
/// refinement with step halving; T2 is clamped to [1, 3000] ms. An all-zero
/// signal returns `(0, lower clamp)` flagged as background.
pub fn lsq_fit_t2(signals: &[f64], te_ms: &[f64]) -> Result<T2Fit, FitError> {
    validate_signals(signals, te_ms, 2)?;
    let (t2_lo, t2_hi) = ParamKind::T2.clamp_range();
    let positive: Vec<(f64, f64)> = te_ms
        .iter()
        .zip(signals)
        .filter(|(_, &s)| s > POSITIVE_FLOOR)
        .map(|(&te, &s)| (te, s.ln()))
        .collect();
    if positive.len() < 2 {
        return Ok(T2Fit {
            pd: 0.0,
            t2_ms: t2_lo,
            background: true,
        });
    }
    let n = positive.len() as f64;
    let sx: f64 = positive.iter().map(|(te, _)| te).sum();
    let sy: f64 = positive.iter().map(|(_, l)| l).sum();
    let sxx: f64 = positive.iter().map(|(te, _)| te * te).sum();
    let sxy: f64 = positive.iter().map(|(te, l)| te * l).sum();
    let var = n * sxx - sx * sx;
    if var.abs() < 1e-300 {
        return Err(FitError::DegenerateSchedule);
    }
    let slope = (n * sxy - sx * sy) / var;
    let intercept = (sy - slope * sx) / n;
    let mut t2 = if slope < -1e-300 {
        (-1.0 / slope).clamp(t2_lo, t2_hi)
    } else {
        t2_hi
    };
    let mut pd = intercept.exp();

    let sse = |pd: f64, t2: f64| -> f64 {
        te_ms
            .iter()
            .zip(signals)
            .map(|(&te, &s)| {
                let r = pd * (-te / t2).exp() - s;
                r * r
            })
            .sum()
    };
    let mut current = sse(pd, t2);
    for _ in 0..GN_MAX_ITERS {
        let mut jtj = [[0.0f64; 2]; 2];
        let mut jtr = [0.0f64; 2];
        for (&te, &s) in te_ms.iter().zip(signals) {
            let e = (-te / t2).exp();
            let r = pd * e - s;
            let j = [e, pd * te / (t2 * t2) * e];
            for (row, &ja) in jtj.iter_mut().zip(&j) {
                for (v, &jb) in row.iter_mut().zip(&j) {
                    *v += ja * jb;
                }
            }
            jtr[0] += j[0] * r;
            jtr[1] += j[1] * r;
        }
        jtj[0][0] += 1e-12;
        jtj[1][1] += 1e-12;
        let Some(delta) = solve2(jtj, [-jtr[0], -jtr[1]]) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let pd_new = (pd + scale * delta[0]).max(0.0);
            let t2_new = (t2 + scale * delta[1]).clamp(t2_lo, t2_hi);
            let next = sse(pd_new, t2_new);
            if next <= current {
                let step = ((pd_new - pd).abs() + (t2_new - t2).abs())
                    / (pd.abs() + t2.abs()).max(POSITIVE_FLOOR);
                pd = pd_new;
                t2 = t2_new;
                current = next;
                accepted = true;
                if step < GN_STEP_TOL {
                    return Ok(T2Fit {
                        pd,
                        t2_ms: t2,
                        background: false,
                    });
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(T2Fit {
        pd,
        t2_ms: t2,
        background: false,
    })
}

/// 3-parameter MOLLI fit of `S = |A - B exp(-TI / T1*)|` with the
/// Look-Locker correction `T1 = T1* (B/A - 1)`.
///
/// Initialization scans T1* over {100, 200, ..., 3000} ms; each candidate
/// restores the pre-magnitude signs (the first j samples negated, over all
/// null positions j) and solves the linear (A, B) subproblem in closed form.
/// Gauss-Newton with step halving refines the best candidate; T1 is clamped
/// to [1, 5000] ms.
pub fn lsq_fit_t1_molli(signals: &[f64], ti_ms: &[f64]) -> Result<MolliFit, FitError> {
    validate_signals(signals, ti_ms, 3)?;
    let (t1_lo, t1_hi) = ParamKind::T1.clamp_range();
    let p = signals.len();
    let s_max = signals.iter().cloned().fold(f64::MIN, f64::max);
    let s_min = signals.iter().cloned().fold(f64::MAX, f64::min);
    if s_max < POSITIVE_FLOOR || (s_max - s_min) < POSITIVE_FLOOR * s_max.max(1.0) {
        let mean = signals.iter().sum::<f64>() / p as f64;
        return Ok(MolliFit {
            a: mean,
            b: 0.0,
            t1star_ms: t1_lo,
            t1_ms: t1_lo,
            background: true,
        });
    }

    let objective = |a: f64, b: f64, tau: f64| -> f64 {
        ti_ms
            .iter()
            .zip(signals)
            .map(|(&ti, &s)| {
                let r = (a - b * (-ti / tau).exp()).abs() - s;
                r * r
            })
            .sum()
    };

    // The magnitude model is smooth only within one sign pattern, so fit the
    // signed model per null position: the first `flip` samples are negated,
    // (A, B) comes from the closed-form linear sub-solve on a T1* grid and
    // Gauss-Newton refines the smooth signed residual. Candidates are ranked
    // by the true magnitude objective.
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for flip in 0..=p {
        let signed: Vec<f64> = signals
            .iter()
            .enumerate()
            .map(|(i, &s)| if i < flip { -s } else { s })
            .collect();
        let mut start: Option<(f64, f64, f64, f64)> = None;
        for step in 1..=30 {
            let tau = 100.0 * step as f64;
            let e: Vec<f64> = ti_ms.iter().map(|&ti| (-ti / tau).exp()).collect();
            let n = p as f64;
            let se: f64 = e.iter().sum();
            let see: f64 = e.iter().map(|v| v * v).sum();
            let ss: f64 = signed.iter().sum();
            let ses: f64 = e.iter().zip(&signed).map(|(a, b)| a * b).sum();
            let Some([a, b]) = solve2([[n, -se], [-se, see]], [ss, -ses]) else {
                continue;
            };
            if a <= POSITIVE_FLOOR || b <= POSITIVE_FLOOR {
                continue;
            }
            let sse: f64 = e
                .iter()
                .zip(&signed)
                .map(|(&ev, &sv)| {
                    let r = a - b * ev - sv;
                    r * r
                })
                .sum();
            if start.map_or(true, |(_, _, _, o)| sse < o) {
                start = Some((a, b, tau, sse));
            }
        }
        let Some((a0, b0, tau0, sse0)) = start else {
            continue;
        };
        let (a, b, tau) = gn_refine_signed(&signed, ti_ms, a0, b0, tau0, sse0);
        let obj = objective(a, b, tau);
        if best.map_or(true, |(_, _, _, o)| obj < o) {
            best = Some((a, b, tau, obj));
        }
    }
    let Some((a0, b0, tau0, obj0)) = best else {
        let mean = signals.iter().sum::<f64>() / p as f64;
        return Ok(MolliFit {
            a: mean,
            b: 0.0,
            t1star_ms: t1_lo,
            t1_ms: t1_lo,
            background: true,
        });
    };
    // final polish on the magnitude objective
    let (a, b, tau, _) = gn_refine_molli(signals, ti_ms, a0, b0, tau0, obj0, &objective);
    let t1 = (tau * (b / a - 1.0)).clamp(t1_lo, t1_hi);
    Ok(MolliFit {
        a,
        b,
        t1star_ms: tau,
        t1_ms: t1,
        background: false,
    })
}

/// Gauss-Newton on the smooth signed residual `A - B exp(-TI/T1*) - s'`.
fn gn_refine_signed(
    signed: &[f64],
    ti_ms: &[f64],
    mut a: f64,
    mut b: f64,
    mut tau: f64,
    mut current: f64,
) -> (f64, f64, f64) {
    let sse = |a: f64, b: f64, tau: f64| -> f64 {
        ti_ms
            .iter()
            .zip(signed)
            .map(|(&ti, &s)| {
                let r = a - b * (-ti / tau).exp() - s;
                r * r
            })
            .sum()
    };
    for _ in 0..GN_MAX_ITERS {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&ti, &s) in ti_ms.iter().zip(signed) {
            let e = (-ti / tau).exp();
            let r = a - b * e - s;
            let j = [1.0, -e, -b * e * ti / (tau * tau)];
            for (row, &ja) in jtj.iter_mut().zip(&j) {
                for (v, &jb) in row.iter_mut().zip(&j) {
                    *v += ja * jb;
                }
            }
            for (t, &ji) in jtr.iter_mut().zip(&j) {
                *t += ji * r;
            }
        }
        for (k, row) in jtj.iter_mut().enumerate() {
            row[k] += 1e-12;
        }
        let aug = [
            [jtj[0][0], jtj[0][1], jtj[0][2], -jtr[0]],
            [jtj[1][0], jtj[1][1], jtj[1][2], -jtr[1]],
            [jtj[2][0], jtj[2][1], jtj[2][2], -jtr[2]],
        ];
        let Some(delta) = solve3(aug) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let a_new = (a + scale * delta[0]).max(POSITIVE_FLOOR);
            let b_new = (b + scale * delta[1]).max(0.0);
            let tau_new = (tau + scale * delta[2]).clamp(1.0, 6000.0);
            let next = sse(a_new, b_new, tau_new);
            if next <= current {
                let step = ((a_new - a).abs() + (b_new - b).abs() + (tau_new - tau).abs())
                    / (a.abs() + b.abs() + tau.abs()).max(POSITIVE_FLOOR);
                a = a_new;
                b = b_new;
                tau = tau_new;
                current = next;
                accepted = true;
                if step < GN_STEP_TOL {
                    return (a, b, tau);
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (a, b, tau)
}

fn gn_refine_molli(
    signals: &[f64],
    ti_ms: &[f64],
    mut a: f64,
    mut b: f64,
    mut tau: f64,
    mut current: f64,
    objective: &dyn Fn(f64, f64, f64) -> f64,
) -> (f64, f64, f64, f64) {
    for _ in 0..GN_MAX_ITERS {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&ti, &s) in ti_ms.iter().zip(signals) {
            let e = (-ti / tau).exp();
            let m = a - b * e;
            let sgn = if m > 0.0 {
                1.0
            } else if m < 0.0 {
                -1.0
            } else {
                0.0
            };
            let r = m.abs() - s;
            let j = [sgn, -sgn * e, -sgn * b * e * ti / (tau * tau)];
            for (row, &ja) in jtj.iter_mut().zip(&j) {
                for (v, &jb) in row.iter_mut().zip(&j) {
                    *v += ja * jb;
                }
            }
            for (t, &ji) in jtr.iter_mut().zip(&j) {
                *t += ji * r;
            }
        }
        for (k, row) in jtj.iter_mut().enumerate() {
            row[k] += 1e-12;
        }
        let aug = [
            [jtj[0][0], jtj[0][1], jtj[0][2], -jtr[0]],
            [jtj[1][0], jtj[1][1], jtj[1][2], -jtr[1]],
            [jtj[2][0], jtj[2][1], jtj[2][2], -jtr[2]],
        ];
        let Some(delta) = solve3(aug) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let a_new = (a + scale * delta[0]).max(POSITIVE_FLOOR);
            let b_new = (b + scale * delta[1]).max(0.0);
            let tau_new = (tau + scale * delta[2]).clamp(1.0, 6000.0);
            let next = objective(a_new, b_new, tau_new);
            if next <= current {
                let step = ((a_new - a).abs() + (b_new - b).abs() + (tau_new - tau).abs())
                    / (a.abs() + b.abs() + tau.abs()).max(POSITIVE_FLOOR);
                a = a_new;
                b = b_new;
                tau = tau_new;
                current = next;
                accepted = true;
                if step < GN_STEP_TOL {
                    return (a, b, tau, current);
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (a, b, tau, current)
}

/// Pixel-wise LSQ parameter map over the foreground. `magnitudes` is the
/// per-phase magnitude stack `(P, H, W)`.
pub fn lsq_param_map(
    magnitudes: &Array3<f64>,
    timings_ms: &[f64],
    kind: ParamKind,
    foreground: &Array2<bool>,
) -> Result<ParameterMap, FitError> {
    let (p, h, w) = magnitudes.dim();
    if p != timings_ms.len() {
        return Err(FitError::LengthMismatch {
            signals: p,
            timings: timings_ms.len(),
        });
    }
    let pixels: Vec<(usize, usize)> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .filter(|&(i, j)| foreground[[i, j]])
        .collect();
    if pixels.is_empty() {
        return Err(FitError::EmptyForeground);
    }
    let fitted: Vec<((usize, usize), f64)> = pixels
        .par_iter()
        .map(|&(i, j)| {
            let signals: Vec<f64> = (0..p).map(|pi| magnitudes[[pi, i, j]]).collect();
            let value = match kind {
                ParamKind::T2 => lsq_fit_t2(&signals, timings_ms).map(|f| f.t2_ms),
                ParamKind::T1 => lsq_fit_t1_molli(&signals, timings_ms).map(|f| f.t1_ms),
            };
            value.map(|v| ((i, j), v))
        })
        .collect::<Result<_, _>>()?;
    let mut values = Array2::zeros((h, w));
    for ((i, j), v) in fitted {
        values[[i, j]] = v;
    }
    Ok(ParameterMap {
        values,
        foreground: foreground.clone(),
    })
}

pub const NORMALIZE_EPS: f64 = 1e-8;
/// Validity threshold factor: 5% of the dataset-median first-phase magnitude.
pub const FOREGROUND_THRESHOLD_FACTOR: f64 = 0.05;

/// First-phase normalization of a pixel's signal/uncertainty pair. The
/// validity flag is false when the first-phase signal falls below the
/// dataset threshold (see [`first_phase_threshold`]).
pub fn normalize_pixel(
    signals: &[f64],
    uncertainties: &[f64],
    threshold: f64,
) -> (Vec<f64>, Vec<f64>, bool) {
    let d = signals.first().copied().unwrap_or(0.0).max(NORMALIZE_EPS);
    let s = signals.iter().map(|&v| v / d).collect();
    let u = uncertainties.iter().map(|&v| v / d).collect();
    let valid = signals.first().copied().unwrap_or(0.0) >= threshold;
    (s, u, valid)
}

/// `0.05 x` median first-phase magnitude over the foreground.
pub fn first_phase_threshold(first_phase: &[f64]) -> f64 {
    if first_phase.is_empty() {
        return 0.0;
    }
    let mut v = first_phase.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if v.len() % 2 == 1 {
        v[v.len() / 2]
    } else {
        0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
    };
    FOREGROUND_THRESHOLD_FACTOR * median
}

/// One foreground pixel ready for the MLP: normalized per-phase signals,
/// normalized uncertainties, target in ms.
#[derive(Debug, Clone)]
pub struct PixelSample {
    pub signals: Vec<f64>,
    pub uncertainties: Vec<f64>,
    pub target_ms: f64,
    pub valid: bool,
}

impl PixelSample {
    pub fn inputs(&self, guided: bool) -> Vec<f64> {
        if guided {
            self.signals
                .iter()
                .chain(self.uncertainties.iter())
                .copied()
                .collect()
        } else {
            self.signals.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitDataset {
    pub samples: Vec<PixelSample>,
    pub guided: bool,
    pub phases: usize,
}

impl FitDataset {
    pub fn input_width(&self) -> usize {
        if self.guided {
            2 * self.phases
        } else {
            self.phases
        }
    }

    /// Concatenate per-image datasets (same guidance and phase count).
    pub fn pool(parts: Vec<FitDataset>) -> Result<FitDataset, FitError> {
        let Some(first) = parts.first() else {
            return Err(FitError::EmptyDataset);
        };
        let (guided, phases) = (first.guided, first.phases);
        let mut samples = Vec::new();
        for part in parts {
            if part.guided != guided || part.phases != phases {
                return Err(FitError::SampleMismatch(
                    "pooled datasets must share guidance and phase count".into(),
                ));
            }
            samples.extend(part.samples);
        }
        Ok(FitDataset {
            samples,
            guided,
            phases,
        })
    }
}

/// One sample per foreground pixel; normalization applied; unguided mode
/// drops the uncertainty vector at input assembly.
pub fn build_fit_dataset<T: Real>(
    recon_mean: &Array3<Complex<T>>,
    sigma: &Array3<T>,
    gt_param: &Array2<f64>,
    foreground: &Array2<bool>,
    guided: bool,
) -> Result<FitDataset, FitError> {
    let (p, h, w) = recon_mean.dim();
    if sigma.dim() != (p, h, w) || gt_param.dim() != (h, w) || foreground.dim() != (h, w) {
        return Err(FitError::SampleMismatch(format!(
            "recon {:?} / sigma {:?} / target {:?} / mask {:?}",
            recon_mean.dim(),
            sigma.dim(),
            gt_param.dim(),
            foreground.dim()
        )));
    }
    let mut first_phase = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if foreground[[i, j]] {
                first_phase.push(recon_mean[[0, i, j]].norm().into_f64());
            }
        }
    }
    if first_phase.is_empty() {
        return Err(FitError::EmptyForeground);
    }
    let threshold = first_phase_threshold(&first_phase);
    let mut samples = Vec::with_capacity(first_phase.len());
    for i in 0..h {
        for j in 0..w {
            if !foreground[[i, j]] {
                continue;
            }
            let signals: Vec<f64> = (0..p)
                .map(|pi| recon_mean[[pi, i, j]].norm().into_f64())
                .collect();
            let unc: Vec<f64> = (0..p).map(|pi| sigma[[pi, i, j]].into_f64()).collect();
            let (s, u, valid) = normalize_pixel(&signals, &unc, threshold);
            samples.push(PixelSample {
                signals: s,
                uncertainties: u,
                target_ms: gt_param[[i, j]],
                valid,
            });
        }
    }
    Ok(FitDataset {
        samples,
        guided,
        phases: p,
    })
}

/// 5 fully connected layers, 64 hidden units, ReLU; trained with Adam and
/// MSE on targets scaled to seconds.
#[derive(Debug, Clone)]
pub struct MlpConfig {
    pub layers: usize,
    pub hidden: usize,
    pub guided: bool,
    pub phases: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub param: ParamKind,
}

impl MlpConfig {
    pub fn new(phases: usize, guided: bool, param: ParamKind, seed: u64) -> Self {
        MlpConfig {
            layers: 5,
            hidden: 64,
            guided,
            phases,
            epochs: 200,
            lr: 0.001,
            batch_size: 1024,
            seed,
            param,
        }
    }

    pub fn input_width(&self) -> usize {
        if self.guided {
            2 * self.phases
        } else {
            self.phases
        }
    }

    /// (Din, Dout) of layer `l`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        let din = if l == 0 { self.input_width() } else { self.hidden };
        let dout = if l + 1 == self.layers { 1 } else { self.hidden };
        (din, dout)
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct MlpWeights<T: Real> {
    pub cfg: MlpConfig,
    pub layers: Vec<LinearLayer<T>>,
}

/// Target scale keeping regression targets O(1): milliseconds / 1000.
pub const TARGET_SCALE: f64 = 1e-3;

impl<T: Real> MlpWeights<T> {
    pub fn init(cfg: MlpConfig) -> Self {
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let (din, dout) = cfg.layer_dims(l);
            let bound = (1.0 / din as f64).sqrt();
            let mut rng = RngStream::new(cfg.seed, "fit-init", l as u64);
            let weight = Tensor::from_fn(&[dout, din], || T::of_f64(rng.range(-bound, bound)));
            let bias = Tensor::from_fn(&[dout], || T::of_f64(rng.range(-bound, bound)));
            layers.push(LinearLayer { weight, bias });
        }
        MlpWeights { cfg, layers }
    }

    pub fn flat_params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn flat_params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn from_flat(cfg: MlpConfig, tensors: Vec<Tensor<T>>) -> Result<Self, FitError> {
        if tensors.len() != cfg.layers * 2 {
            return Err(FitError::SampleMismatch(format!(
                "expected {} tensors, got {}",
                cfg.layers * 2,
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let weight = it.next().expect("weight");
            let bias = it.next().expect("bias");
            layers.push(LinearLayer { weight, bias });
        }
        Ok(MlpWeights { cfg, layers })
    }

    fn graph(&self, tape: &mut Tape<T>, x: NodeId, param_ids: &[NodeId]) -> Result<NodeId, FitError> {
        let mut h = x;
        for l in 0..self.cfg.layers {
            h = tape.linear(h, param_ids[2 * l], param_ids[2 * l + 1])?;
            if l + 1 < self.cfg.layers {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Forward a batch of input rows; returns predictions in milliseconds
/// (unclamped).
pub fn mlp_forward<T: Real>(
    weights: &MlpWeights<T>,
    rows: &[Vec<f64>],
) -> Result<Vec<f64>, FitError> {
    let width = weights.cfg.input_width();
    if rows.iter().any(|r| r.len() != width) {
        return Err(FitError::WidthMismatch {
            expected: width,
            got: rows.first().map_or(0, |r| r.len()),
        });
    }
    let mut tape = Tape::new();
    let param_ids: Vec<NodeId> = weights
        .flat_params()
        .into_iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let data: Vec<T> = rows.iter().flatten().map(|&v| T::of_f64(v)).collect();
    let x = tape.constant(Tensor::from_vec(&[rows.len(), width], data)?);
    let out = weights.graph(&mut tape, x, &param_ids)?;
    Ok(tape
        .value(out)
        .data()
        .iter()
        .map(|v| v.into_f64() / TARGET_SCALE)
        .collect())
}

pub struct TrainedMlp<T: Real> {
    pub weights: MlpWeights<T>,
    pub loss_curve: Vec<f64>,
}

/// Train the pixel regressor on the valid samples of a fit dataset.
/// Deterministic under the config seed; aborts on non-finite loss.
pub fn train_fit_mlp<T: Real>(ds: &FitDataset, cfg: &MlpConfig) -> Result<TrainedMlp<T>, FitError> {
    if cfg.guided != ds.guided || cfg.phases != ds.phases {
        return Err(FitError::WidthMismatch {
            expected: cfg.input_width(),
            got: ds.input_width(),
        });
    }
    let rows: Vec<(Vec<f64>, f64)> = ds
        .samples
        .iter()
        .filter(|s| s.valid)
        .map(|s| (s.inputs(ds.guided), s.target_ms * TARGET_SCALE))
        .collect();
    if rows.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    let width = cfg.input_width();
    let mut weights = MlpWeights::<T>::init(cfg.clone());
    let param_lens: Vec<usize> = weights.flat_params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::<T>::new(&param_lens);
    let n = rows.len();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::new(cfg.seed, "fit-shuffle", epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let mut tape = Tape::new();
            let param_ids: Vec<NodeId> = weights
                .flat_params()
                .into_iter()
                .map(|p| tape.param(p.clone()))
                .collect();
            let xdata: Vec<T> = chunk
                .iter()
                .flat_map(|&i| rows[i].0.iter().map(|&v| T::of_f64(v)))
                .collect();
            let tdata: Vec<T> = chunk.iter().map(|&i| T::of_f64(rows[i].1)).collect();
            let x = tape.constant(Tensor::from_vec(&[chunk.len(), width], xdata)?);
            let t = tape.constant(Tensor::from_vec(&[chunk.len(), 1], tdata)?);
            let out = weights.graph(&mut tape, x, &param_ids)?;
            let loss = tape.mse_loss(out, t)?;
            let loss_val = tape.value(loss).item().into_f64();
            if !loss_val.is_finite() {
                return Err(FitError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss_val * chunk.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = param_ids.iter().map(|&id| tape.grad_tensor(id)).collect();
            let mut params = weights.flat_params_mut();
            adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
        }
        curve.push(epoch_loss / n as f64);
    }
    Ok(TrainedMlp {
        weights,
        loss_curve: curve,
    })
}

/// Pixel-by-pixel MLP prediction over the foreground. Background pixels are
/// zero; foreground predictions are clamped to the parameter's physical
/// range.
pub fn predict_fit_mlp<T: Real>(
    weights: &MlpWeights<T>,
    recon_mean: &Array3<Complex<T>>,
    sigma: &Array3<T>,
    foreground: &Array2<bool>,
    guided: bool,
) -> Result<ParameterMap, FitError> {
    if guided != weights.cfg.guided {
        return Err(FitError::WidthMismatch {
            expected: weights.cfg.input_width(),
            got: if guided {
                2 * weights.cfg.phases
            } else {
                weights.cfg.phases
            },
        });
    }
    let gt_placeholder = Array2::zeros(foreground.dim());
    let ds = build_fit_dataset(recon_mean, sigma, &gt_placeholder, foreground, guided)?;
    let rows: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.inputs(guided)).collect();
    let preds = mlp_forward(weights, &rows)?;
    let (lo, hi) = weights.cfg.param.clamp_range();
    let (h, w) = foreground.dim();
    let mut values = Array2::zeros((h, w));
    let mut k = 0usize;
    for i in 0..h {
        for j in 0..w {
            if foreground[[i, j]] {
                values[[i, j]] = preds[k].clamp(lo, hi);
                k += 1;
            }
        }
    }
    Ok(ParameterMap {
        values,
        foreground: foreground.clone(),
    })
}

/// Total uncertainty of the NLL+MD combination: the per-pixel variance over
/// the MC reconstructions (complex modulus, population convention) plus the
/// mean per-sample aleatoric variance; returned as a standard deviation.
pub fn combine_uncertainty_nll_md<T: Real>(
    recons: &[Array3<Complex<T>>],
    aleatoric_vars: &[Array3<T>],
) -> Result<Array3<T>, FitError> {
    if recons.is_empty() || aleatoric_vars.is_empty() {
        return Err(FitError::NoSamples);
    }
    if recons.len() != aleatoric_vars.len() {
        return Err(FitError::SampleMismatch(format!(
            "{} reconstructions vs {} variance maps",
            recons.len(),
            aleatoric_vars.len()
        )));
    }
    let dim = recons[0].dim();
    let t = T::of_f64(recons.len() as f64);
    let mut mean = Array3::from_elem(dim, Complex::new(T::zero(), T::zero()));
    for x in recons {
        if x.dim() != dim {
            return Err(FitError::SampleMismatch("reconstruction shapes differ".into()));
        }
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += Complex::new(v.re / t, v.im / t);
        }
    }
    let mut total = Array3::from_elem(dim, T::zero());
    for x in recons {
        for (s, (m, v)) in total.iter_mut().zip(mean.iter().zip(x.iter())) {
            let d = *v - *m;
            *s += (d.re * d.re + d.im * d.im) / t;
        }
    }
    for va in aleatoric_vars {
        if va.dim() != dim {
            return Err(FitError::SampleMismatch("variance shapes differ".into()));
        }
        for (s, v) in total.iter_mut().zip(va.iter()) {
            *s += *v / t;
        }
    }
    Ok(total.mapv(|v| v.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics;
    use approx::assert_relative_eq;

    #[test]
    fn t2_fit_recovers_noiseless_signals_on_default_schedule() {
        let preset = physics::SequencePreset::t2prep_default();
        let signals: Vec<f64> = preset
            .timings_ms
            .iter()
            .map(|&te| physics::t2prep_signal(1.0, 80.0, te).unwrap())
            .collect();
        let fit = lsq_fit_t2(&signals, &preset.timings_ms).unwrap();
        assert_relative_eq!(fit.t2_ms, 80.0, max_relative = 1e-6);
        assert_relative_eq!(fit.pd, 1.0, max_relative = 1e-6);
        assert!(!fit.background);
    }

    #[test]
    fn t2_fit_two_point_closed_form_is_exact() {
        let signals = [1.0, (-1.0f64).exp()];
        let te = [0.0, 100.0];
        let fit = lsq_fit_t2(&signals, &te).unwrap();
        assert_relative_eq!(fit.t2_ms, 100.0, max_relative = 1e-12);
        assert_relative_eq!(fit.pd, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn t2_fit_constant_signal_hits_upper_clamp() {
        let signals = [0.7; 8];
        let te: Vec<f64> = (0..8).map(|i| 20.0 * i as f64).collect();
        let fit = lsq_fit_t2(&signals, &te).unwrap();
        assert_eq!(fit.t2_ms, 3000.0);
    }

    #[test]
    fn t2_fit_zero_signal_is_background() {
        let fit = lsq_fit_t2(&[0.0; 4], &[0.0, 25.0, 50.0, 75.0]).unwrap();
        assert!(fit.background);
        assert_eq!(fit.pd, 0.0);
        assert_eq!(fit.t2_ms, 1.0);
    }

    #[test]
    fn t2_fit_grid_round_trip() {
        let preset = physics::SequencePreset::t2prep_default();
        for k in 0..50 {
            let t2 = 40.0 + (250.0 - 40.0) * k as f64 / 49.0;
            let pd = 0.9;
            let signals: Vec<f64> = preset
                .timings_ms
                .iter()
                .map(|&te| physics::t2prep_signal(pd, t2, te).unwrap())
                .collect();
            let fit = lsq_fit_t2(&signals, &preset.timings_ms).unwrap();
            assert_relative_eq!(fit.t2_ms, t2, max_relative = 1e-6);
            assert_relative_eq!(fit.pd, pd, max_relative = 1e-6);
        }
    }

    #[test]
    fn molli_fit_recovers_noiseless_signals() {
        let preset = physics::SequencePreset::molli_default();
        let signals: Vec<f64> = preset
            .timings_ms
            .iter()
            .map(|&ti| physics::molli_signal(1.0, 2.0, 1000.0, ti).unwrap())
            .collect();
        let fit = lsq_fit_t1_molli(&signals, &preset.timings_ms).unwrap();
        assert_relative_eq!(fit.t1_ms, 1000.0, max_relative = 1e-6);
        assert_relative_eq!(fit.a, 1.0, max_relative = 1e-6);
        assert_relative_eq!(fit.b, 2.0, max_relative = 1e-6);
    }

    #[test]
    fn molli_fit_grid_round_trip() {
        let preset = physics::SequencePreset::molli_default();
        for k in 0..50 {
            let t1 = 300.0 + (2000.0 - 300.0) * k as f64 / 49.0;
            let signals: Vec<f64> = preset
                .timings_ms
                .iter()
                .map(|&ti| physics::molli_signal(1.0, 2.0, t1, ti).unwrap())
                .collect();
            let fit = lsq_fit_t1_molli(&signals, &preset.timings_ms).unwrap();
            assert_relative_eq!(fit.t1_ms, t1, max_relative = 1e-6);
        }
    }

    #[test]
    fn molli_fit_is_scale_homogeneous() {
        let preset = physics::SequencePreset::molli_default();
        let signals: Vec<f64> = preset
            .timings_ms
            .iter()
            .map(|&ti| physics::molli_signal(0.8, 1.6, 700.0, ti).unwrap())
            .collect();
        let scaled: Vec<f64> = signals.iter().map(|&s| 3.5 * s).collect();
        let f1 = lsq_fit_t1_molli(&signals, &preset.timings_ms).unwrap();
        let f2 = lsq_fit_t1_molli(&scaled, &preset.timings_ms).unwrap();
        assert_relative_eq!(f1.t1_ms, f2.t1_ms, max_relative = 1e-6);
        assert_relative_eq!(3.5 * f1.a, f2.a, max_relative = 1e-6);
        assert_relative_eq!(3.5 * f1.b, f2.b, max_relative = 1e-6);
    }

    #[test]
    fn molli_correction_identity_when_b_is_twice_a() {
        // T1 = T1* (B/A - 1) collapses to T1 = T1* at B/A = 2
        assert_eq!(physics::molli_t1(1.0, 2.0, 850.0), 850.0);
        let fit = MolliFit {
            a: 1.0,
            b: 2.0,
            t1star_ms: 850.0,
            t1_ms: physics::molli_t1(1.0, 2.0, 850.0),
            background: false,
        };
        assert_eq!(fit.t1_ms, fit.t1star_ms);
    }

    #[test]
    fn molli_fit_flags_degenerate_signals() {
        let fit = lsq_fit_t1_molli(&[0.5; 5], &[100.0, 200.0, 300.0, 400.0, 500.0]).unwrap();
        assert!(fit.background);
    }

    #[test]
    fn normalize_examples() {
        // signals[0] = 1 leaves the pair unchanged
        let (s, u, valid) = normalize_pixel(&[1.0, 0.5, 0.2], &[0.1, 0.2, 0.3], 0.05);
        assert_eq!(s, vec![1.0, 0.5, 0.2]);
        assert_eq!(u, vec![0.1, 0.2, 0.3]);
        assert!(valid);

        // scale invariance
        let c = 37.5;
        let (s2, u2, _) = normalize_pixel(&[c, 0.5 * c, 0.2 * c], &[0.1 * c, 0.2 * c, 0.3 * c], 0.05);
        for (a, b) in s2.iter().zip(&s) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        for (a, b) in u2.iter().zip(&u) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }

        // zero first phase divides by eps and is flagged invalid
        let (s3, _, valid3) = normalize_pixel(&[0.0, 0.5], &[0.0, 0.0], 0.05);
        assert!(!valid3);
        assert_eq!(s3[1], 0.5 / NORMALIZE_EPS);
    }

    fn toy_image(
        p: usize,
        h: usize,
        w: usize,
        target: f64,
    ) -> (
        ndarray::Array3<num_complex::Complex<f64>>,
        ndarray::Array3<f64>,
        ndarray::Array2<f64>,
        ndarray::Array2<bool>,
    ) {
        let mean = ndarray::Array3::from_shape_fn((p, h, w), |(pi, _, _)| {
            num_complex::Complex::new(1.0 / (1.0 + pi as f64), 0.0)
        });
        let sigma = ndarray::Array3::from_elem((p, h, w), 0.01);
        let gt = ndarray::Array2::from_elem((h, w), target);
        let fg = ndarray::Array2::from_shape_fn((h, w), |(i, j)| i >= 1 && j >= 1);
        (mean, sigma, gt, fg)
    }

    #[test]
    fn dataset_width_contract_and_counts() {
        let (mean, sigma, gt, fg) = toy_image(4, 6, 6, 100.0);
        let guided = build_fit_dataset(&mean, &sigma, &gt, &fg, true).unwrap();
        let unguided = build_fit_dataset(&mean, &sigma, &gt, &fg, false).unwrap();
        let n_fg = fg.iter().filter(|&&f| f).count();
        assert_eq!(guided.samples.len(), n_fg);
        assert_eq!(unguided.samples.len(), n_fg);
        assert_eq!(guided.input_width(), 8);
        assert_eq!(unguided.input_width(), 4);
        assert_eq!(unguided.samples[0].inputs(false).len(), 4);

        let empty = ndarray::Array2::from_elem((6, 6), false);
        assert!(matches!(
            build_fit_dataset(&mean, &sigma, &gt, &empty, true),
            Err(FitError::EmptyForeground)
        ));
    }

    #[test]
    fn mlp_converges_on_constant_target() {
        let (mean, sigma, gt, fg) = toy_image(4, 8, 8, 100.0);
        let ds = build_fit_dataset(&mean, &sigma, &gt, &fg, true).unwrap();
        let mut cfg = MlpConfig::new(4, true, ParamKind::T2, 3);
        cfg.epochs = 400;
        let trained = train_fit_mlp::<f64>(&ds, &cfg).unwrap();
        let map = predict_fit_mlp(&trained.weights, &mean, &sigma, &fg, true).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                if fg[[i, j]] {
                    assert!(
                        (map.values[[i, j]] - 100.0).abs() < 1.0,
                        "pixel ({i},{j}) = {}",
                        map.values[[i, j]]
                    );
                } else {
                    assert_eq!(map.values[[i, j]], 0.0, "background must be zero");
                }
            }
        }
        let first = trained.loss_curve[0];
        let last = *trained.loss_curve.last().unwrap();
        assert!(last <= first);
    }

    #[test]
    fn mlp_training_deterministic_and_lr_zero_frozen() {
        let (mean, sigma, gt, fg) = toy_image(4, 6, 6, 250.0);
        let ds = build_fit_dataset(&mean, &sigma, &gt, &fg, false).unwrap();
        let mut cfg = MlpConfig::new(4, false, ParamKind::T2, 5);
        cfg.epochs = 5;
        let a = train_fit_mlp::<f32>(&ds, &cfg).unwrap();
        let b = train_fit_mlp::<f32>(&ds, &cfg).unwrap();
        for (pa, pb) in a.weights.flat_params().iter().zip(b.weights.flat_params()) {
            assert_eq!(pa.data(), pb.data());
        }
        cfg.lr = 0.0;
        let frozen = train_fit_mlp::<f32>(&ds, &cfg).unwrap();
        let init = MlpWeights::<f32>::init(cfg.clone());
        for (pa, pb) in frozen.weights.flat_params().iter().zip(init.flat_params()) {
            assert_eq!(pa.data(), pb.data());
        }
    }

    #[test]
    fn guided_and_unguided_weights_are_not_interchangeable() {
        let (mean, sigma, _, fg) = toy_image(4, 6, 6, 100.0);
        let cfg = MlpConfig::new(4, false, ParamKind::T2, 7);
        let w = MlpWeights::<f64>::init(cfg);
        assert!(matches!(
            predict_fit_mlp(&w, &mean, &sigma, &fg, true),
            Err(FitError::WidthMismatch { .. })
        ));
    }

    #[test]
    fn guided_mlp_with_zeroed_uncertainty_columns_matches_unguided() {
        // structural parity: [W1 | 0] on [signals, sigma] equals W1 on signals
        let p = 4;
        let unguided_cfg = MlpConfig::new(p, false, ParamKind::T2, 11);
        let unguided = MlpWeights::<f64>::init(unguided_cfg.clone());
        let mut guided_cfg = unguided_cfg.clone();
        guided_cfg.guided = true;
        let mut layers = unguided.layers.clone();
        let w1 = &unguided.layers[0].weight;
        let (dout, din) = (w1.shape()[0], w1.shape()[1]);
        let mut padded = Tensor::zeros(&[dout, 2 * din]);
        for r in 0..dout {
            for c in 0..din {
                padded.data_mut()[r * 2 * din + c] = w1.data()[r * din + c];
            }
        }
        layers[0].weight = padded;
        let guided = MlpWeights {
            cfg: guided_cfg,
            layers,
        };
        let signals = vec![vec![1.0, 0.8, 0.6, 0.4], vec![1.0, 0.5, 0.25, 0.125]];
        let with_sigma: Vec<Vec<f64>> = signals
            .iter()
            .map(|s| {
                let mut r = s.clone();
                r.extend([0.33, 0.1, 0.2, 0.05]); // values in the zeroed columns are ignored
                r
            })
            .collect();
        let a = mlp_forward(&unguided, &signals).unwrap();
        let b = mlp_forward(&guided, &with_sigma).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn nll_stationary_point_matches_golden_section_probe() {
        // frozen residual r: optimum of 0.5(exp(-s) r^2 + s) sits at s* = ln r^2
        use crate::diffnum::tape::Tape;
        let r: f64 = 0.37;
        let loss_at = |s_val: f64| -> f64 {
            let mut tape = Tape::<f64>::new();
            let pred = tape.constant(Tensor::full(&[1, 2, 1, 1], r));
            let target = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
            let s = tape.constant(Tensor::full(&[1, 1, 1, 1], s_val));
            let l = tape.gaussian_nll_loss(pred, s, target).unwrap();
            tape.value(l).item()
        };
        let (mut lo, mut hi) = ((r * r).ln() - 5.0, (r * r).ln() + 5.0);
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if loss_at(m1) < loss_at(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let s_star = 0.5 * (lo + hi);
        assert!(
            (s_star - (r * r).ln()).abs() < 1e-4,
            "golden-section {} vs ln r^2 {}",
            s_star,
            (r * r).ln()
        );
    }

    #[test]
    fn combine_uncertainty_components() {
        use ndarray::Array3;
        use num_complex::Complex;
        let dim = (2usize, 3usize, 3usize);
        // pure aleatoric: identical recons, constant variance v -> sigma = sqrt(v)
        let recons = vec![Array3::from_elem(dim, Complex::new(0.5f64, -0.25)); 4];
        let vars = vec![Array3::from_elem(dim, 0.09f64); 4];
        let sigma = combine_uncertainty_nll_md(&recons, &vars).unwrap();
        for &s in sigma.iter() {
            assert_relative_eq!(s, 0.3, max_relative = 1e-12);
        }

        // pure epistemic: zero aleatoric reduces to the MC standard deviation
        let mut varying = recons.clone();
        varying[0].mapv_inplace(|v| v + Complex::new(0.1, 0.0));
        let zero_vars = vec![Array3::from_elem(dim, 0.0f64); 4];
        let sigma_e = combine_uncertainty_nll_md(&varying, &zero_vars).unwrap();
        let mean = 0.5 + 0.1 / 4.0;
        let expect = ((0.5f64 + 0.1 - mean).powi(2) + 3.0 * (0.5 - mean).powi(2)) / 4.0;
        for &s in sigma_e.iter() {
            assert_relative_eq!(s, expect.sqrt(), max_relative = 1e-12);
        }

        // both components add in variance
        let sigma_both = combine_uncertainty_nll_md(&varying, &vars).unwrap();
        for &s in sigma_both.iter() {
            assert_relative_eq!(s * s, expect + 0.09, max_relative = 1e-9);
        }
    }

    #[test]
    fn lsq_param_map_round_trips_simulated_phases() {
        // noiseless magnitudes from the physics models invert exactly
        let ranges = physics::PhantomRanges::default();
        let spec = physics::PhantomSpec::random(24, 24, &ranges, 3, 0);
        let phantom = physics::make_phantom(&spec).unwrap();
        for (preset, kind) in [
            (physics::SequencePreset::t2prep_default(), ParamKind::T2),
            (physics::SequencePreset::molli_default(), ParamKind::T1),
        ] {
            let img = physics::simulate_phases(&phantom, &preset, None).unwrap();
            let mags = img.mapv(|v| v.norm());
            let map = lsq_param_map(&mags, &preset.timings_ms, kind, &phantom.foreground).unwrap();
            let reference = match kind {
                ParamKind::T2 => &phantom.t2_ms,
                ParamKind::T1 => &phantom.t1_ms,
            };
            for i in 0..24 {
                for j in 0..24 {
                    if phantom.foreground[[i, j]] {
                        let rel = (map.values[[i, j]] - reference[[i, j]]).abs() / reference[[i, j]];
                        assert!(rel < 1e-6, "{:?} pixel ({i},{j}): rel {rel}", kind);
                    }
                }
            }
        }
    }
}
