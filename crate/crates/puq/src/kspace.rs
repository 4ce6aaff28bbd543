//! Multi-coil Cartesian acquisition model.
//!
//! Centered orthonormal 2-D FFT (DC at `(H/2, W/2)`, scale `1/sqrt(HW)` both
//! directions), per-phase 1-D undersampling masks with a centered ACS block,
//! the SENSE-style forward/adjoint pair and the hard-replacement data
//! consistency layer. The phase-encode direction is the row axis: a mask row
//! covers one full frequency-encode line.

use ndarray::{Array2, Array3, Array4};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;
use thiserror::Error;

use crate::diffnum::real::Real;
use crate::diffnum::rng::{purpose, RngStream};

#[derive(Debug, Error)]
pub enum KspaceError {
    #[error("acceleration must satisfy R >= 1, got {0}")]
    BadAccel(f64),
    #[error("ACS fraction must lie in (0, 1), got {0}")]
    BadAcsFraction(f64),
    #[error("ACS block of {acs} lines exceeds the sampling budget of {budget} lines (N = {n}, R = {accel})")]
    AcsBudget {
        acs: usize,
        budget: usize,
        n: usize,
        accel: f64,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

fn ishift(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

fn fshift(i: usize, n: usize) -> usize {
    (i + n.div_ceil(2)) % n
}

/// Plan cache for one image size.
pub struct Fft2d<T: Real> {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Fft2d<T> {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2d {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    /// Centered orthonormal forward transform.
    pub fn fft2c(&self, img: &Array2<Complex<T>>) -> Array2<Complex<T>> {
        self.transform(img, true)
    }

    /// Centered orthonormal inverse transform; exact inverse of `fft2c`.
    pub fn ifft2c(&self, ksp: &Array2<Complex<T>>) -> Array2<Complex<T>> {
        self.transform(ksp, false)
    }

    fn transform(&self, x: &Array2<Complex<T>>, forward: bool) -> Array2<Complex<T>> {
        let (h, w) = (self.h, self.w);
        assert_eq!(x.dim(), (h, w), "Fft2d planned for {h}x{w}");
        // ifftshift both axes into a row-major buffer
        let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
        for i in 0..h {
            let si = ishift(i, h);
            for j in 0..w {
                buf[i * w + j] = x[[si, ishift(j, w)]];
            }
        }
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row.process(&mut buf);
        // transpose to make columns contiguous
        let mut tbuf = vec![Complex::new(T::zero(), T::zero()); h * w];
        for i in 0..h {
            for j in 0..w {
                tbuf[j * h + i] = buf[i * w + j];
            }
        }
        col.process(&mut tbuf);
        // transpose back with fftshift and orthonormal scale
        let scale = T::one() / T::of_f64(((h * w) as f64).sqrt());
        let mut out = Array2::from_elem((h, w), Complex::new(T::zero(), T::zero()));
        for i in 0..h {
            let si = fshift(i, h);
            for j in 0..w {
                let v = tbuf[fshift(j, w) * h + si];
                out[[i, j]] = Complex::new(v.re * scale, v.im * scale);
            }
        }
        out
    }
}

/// One-shot centered orthonormal FFT (plans are built per call).
pub fn fft2c<T: Real>(img: &Array2<Complex<T>>) -> Array2<Complex<T>> {
    let (h, w) = img.dim();
    Fft2d::new(h, w).fft2c(img)
}

/// One-shot inverse of [`fft2c`].
pub fn ifft2c<T: Real>(ksp: &Array2<Complex<T>>) -> Array2<Complex<T>> {
    let (h, w) = ksp.dim();
    Fft2d::new(h, w).ifft2c(ksp)
}

/// Per-phase boolean sampling masks over the phase-encode lines.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    /// `(phase, line)`; true where sampled. Constant along frequency encode.
    pub lines: Array2<bool>,
    pub accel: f64,
    pub acs_frac: f64,
}

impl MaskSet {
    pub fn n_phases(&self) -> usize {
        self.lines.dim().0
    }

    pub fn n_lines(&self) -> usize {
        self.lines.dim().1
    }

    pub fn sampled_count(&self, phase: usize) -> usize {
        self.lines.row(phase).iter().filter(|&&m| m).count()
    }
}

/// Number of sampled lines for grid size `n` at acceleration `accel`.
pub fn sampled_lines(n: usize, accel: f64) -> usize {
    (n as f64 / accel).round() as usize
}

/// Number of fully sampled auto-calibration lines.
pub fn acs_lines(n: usize, acs_frac: f64) -> usize {
    (n as f64 * acs_frac).round() as usize
}

/// Centered contiguous ACS line range.
pub fn acs_range(n: usize, acs_frac: f64) -> std::ops::Range<usize> {
    let n_acs = acs_lines(n, acs_frac);
    let start = n / 2 - n_acs / 2;
    start..start + n_acs
}

/// One phase's sampling mask: `round(N/R)` lines, the centered ACS block
/// always included, the remainder drawn uniformly without replacement from
/// the `(seed, "mask", phase_index)` stream.
pub fn make_mask(
    n_lines: usize,
    accel: f64,
    acs_frac: f64,
    phase_index: usize,
    seed: u64,
) -> Result<Vec<bool>, KspaceError> {
    if accel < 1.0 {
        return Err(KspaceError::BadAccel(accel));
    }
    if !(acs_frac > 0.0 && acs_frac < 1.0) {
        return Err(KspaceError::BadAcsFraction(acs_frac));
    }
    let budget = sampled_lines(n_lines, accel);
    let acs = acs_range(n_lines, acs_frac);
    if acs.len() > budget {
        return Err(KspaceError::AcsBudget {
            acs: acs.len(),
            budget,
            n: n_lines,
            accel,
        });
    }
    let mut mask = vec![false; n_lines];
    for i in acs.clone() {
        mask[i] = true;
    }
    let pool: Vec<usize> = (0..n_lines).filter(|i| !acs.contains(i)).collect();
    let extra = budget - acs.len();
    let mut rng = RngStream::new(seed, purpose::MASK, phase_index as u64);
    for pick in rng.sample_without_replacement(pool.len(), extra) {
        mask[pool[pick]] = true;
    }
    Ok(mask)
}

/// Independent per-phase masks sharing the ACS block.
pub fn make_mask_set(
    n_lines: usize,
    n_phases: usize,
    accel: f64,
    acs_frac: f64,
    seed: u64,
) -> Result<MaskSet, KspaceError> {
    let mut lines = Array2::from_elem((n_phases, n_lines), false);
    for p in 0..n_phases {
        let m = make_mask(n_lines, accel, acs_frac, p, seed)?;
        for (i, &v) in m.iter().enumerate() {
            lines[[p, i]] = v;
        }
    }
    Ok(MaskSet {
        lines,
        accel,
        acs_frac,
    })
}

/// Coil maps plus per-phase masks: the `A` of the inverse problem.
pub struct AcquisitionModel<T: Real> {
    pub coils: Array3<Complex<T>>,
    pub masks: MaskSet,
    fft: Fft2d<T>,
}

impl<T: Real> AcquisitionModel<T> {
    pub fn new(coils: Array3<Complex<T>>, masks: MaskSet) -> Result<Self, KspaceError> {
        let (_, h, w) = coils.dim();
        if masks.n_lines() != h {
            return Err(KspaceError::Shape(format!(
                "mask covers {} phase-encode lines but the image has {} rows",
                masks.n_lines(),
                h
            )));
        }
        Ok(AcquisitionModel {
            fft: Fft2d::new(h, w),
            coils,
            masks,
        })
    }

    pub fn n_coils(&self) -> usize {
        self.coils.dim().0
    }

    pub fn n_phases(&self) -> usize {
        self.masks.n_phases()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.coils.dim().1, self.coils.dim().2)
    }

    fn check_image(&self, x: &Array3<Complex<T>>) -> Result<(), KspaceError> {
        let (p, h, w) = x.dim();
        let (ih, iw) = self.image_shape();
        if p != self.n_phases() || h != ih || w != iw {
            return Err(KspaceError::Shape(format!(
                "image {:?} does not match acquisition (P={}, H={}, W={})",
                x.dim(),
                self.n_phases(),
                ih,
                iw
            )));
        }
        Ok(())
    }

    fn check_kspace(&self, y: &Array4<Complex<T>>) -> Result<(), KspaceError> {
        let (c, p, h, w) = y.dim();
        let (ih, iw) = self.image_shape();
        if c != self.n_coils() || p != self.n_phases() || h != ih || w != iw {
            return Err(KspaceError::Shape(format!(
                "k-space {:?} does not match acquisition (C={}, P={}, H={}, W={})",
                y.dim(),
                self.n_coils(),
                self.n_phases(),
                ih,
                iw
            )));
        }
        Ok(())
    }

    /// `y[c,p] = M_p . F(S_c . x_p)`; unsampled lines are exactly zero.
    pub fn forward(&self, x: &Array3<Complex<T>>) -> Result<Array4<Complex<T>>, KspaceError> {
        self.check_image(x)?;
        let (c, h, w) = self.coils.dim();
        let p = self.n_phases();
        let mut y = Array4::from_elem((c, p, h, w), Complex::new(T::zero(), T::zero()));
        for ci in 0..c {
            for pi in 0..p {
                let mut img = Array2::from_elem((h, w), Complex::new(T::zero(), T::zero()));
                for i in 0..h {
                    for j in 0..w {
                        img[[i, j]] = self.coils[[ci, i, j]] * x[[pi, i, j]];
                    }
                }
                let k = self.fft.fft2c(&img);
                for i in 0..h {
                    if self.masks.lines[[pi, i]] {
                        for j in 0..w {
                            y[[ci, pi, i, j]] = k[[i, j]];
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// `x_p = sum_c conj(S_c) . F^-1(M_p . y[c,p])` — the zero-filled
    /// coil-combined reconstruction.
    pub fn adjoint(&self, y: &Array4<Complex<T>>) -> Result<Array3<Complex<T>>, KspaceError> {
        self.check_kspace(y)?;
        let (c, h, w) = self.coils.dim();
        let p = self.n_phases();
        let mut x = Array3::from_elem((p, h, w), Complex::new(T::zero(), T::zero()));
        for pi in 0..p {
            for ci in 0..c {
                let mut k = Array2::from_elem((h, w), Complex::new(T::zero(), T::zero()));
                for i in 0..h {
                    if self.masks.lines[[pi, i]] {
                        for j in 0..w {
                            k[[i, j]] = y[[ci, pi, i, j]];
                        }
                    }
                }
                let img = self.fft.ifft2c(&k);
                for i in 0..h {
                    for j in 0..w {
                        x[[pi, i, j]] += self.coils[[ci, i, j]].conj() * img[[i, j]];
                    }
                }
            }
        }
        Ok(x)
    }

    /// Hard data consistency: sampled k-space lines are replaced by the
    /// measurement, unsampled lines keep the estimate.
    pub fn dc(
        &self,
        x: &Array3<Complex<T>>,
        y: &Array4<Complex<T>>,
    ) -> Result<Array3<Complex<T>>, KspaceError> {
        self.check_image(x)?;
        self.check_kspace(y)?;
        Ok(self.dc_apply(x, Some(y)))
    }

    /// Linear part of `dc` (the measurement contribution dropped). The
    /// operator is self-adjoint, so this is also its vector-Jacobian product.
    pub fn dc_linear(&self, x: &Array3<Complex<T>>) -> Result<Array3<Complex<T>>, KspaceError> {
        self.check_image(x)?;
        Ok(self.dc_apply(x, None))
    }

    fn dc_apply(&self, x: &Array3<Complex<T>>, y: Option<&Array4<Complex<T>>>) -> Array3<Complex<T>> {
        let (c, h, w) = self.coils.dim();
        let p = self.n_phases();
        let mut out = Array3::from_elem((p, h, w), Complex::new(T::zero(), T::zero()));
        for pi in 0..p {
            for ci in 0..c {
                let mut img = Array2::from_elem((h, w), Complex::new(T::zero(), T::zero()));
                for i in 0..h {
                    for j in 0..w {
                        img[[i, j]] = self.coils[[ci, i, j]] * x[[pi, i, j]];
                    }
                }
                let mut k = self.fft.fft2c(&img);
                for i in 0..h {
                    if self.masks.lines[[pi, i]] {
                        for j in 0..w {
                            k[[i, j]] = match y {
                                Some(y) => y[[ci, pi, i, j]],
                                None => Complex::new(T::zero(), T::zero()),
                            };
                        }
                    }
                }
                let back = self.fft.ifft2c(&k);
                for i in 0..h {
                    for j in 0..w {
                        out[[pi, i, j]] += self.coils[[ci, i, j]].conj() * back[[i, j]];
                    }
                }
            }
        }
        out
    }
}

/// Add complex Gaussian noise (per-component std `sigma`) to the sampled
/// entries of measured k-space; unsampled entries stay exactly zero.
/// Each `(coil, phase)` draws from its own stream; `stream_base` offsets the
/// stream index so multiple acquisitions under one seed stay independent.
pub fn add_noise<T: Real>(
    y: &mut Array4<Complex<T>>,
    masks: &MaskSet,
    sigma: f64,
    seed: u64,
    stream_base: u64,
) {
    if sigma <= 0.0 {
        return;
    }
    let (c, p, h, w) = y.dim();
    for ci in 0..c {
        for pi in 0..p {
            let mut rng = RngStream::new(seed, purpose::NOISE, stream_base + (ci * p + pi) as u64);
            for i in 0..h {
                if !masks.lines[[pi, i]] {
                    continue;
                }
                for j in 0..w {
                    let re = T::of_f64(sigma * rng.normal());
                    let im = T::of_f64(sigma * rng.normal());
                    y[[ci, pi, i, j]] += Complex::new(re, im);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rand_image(p: usize, h: usize, w: usize, seed: u64) -> Array3<Complex<f64>> {
        let mut rng = RngStream::new(seed, "kspace-test", 0);
        Array3::from_shape_fn((p, h, w), |_| Complex::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)))
    }

    #[test]
    fn fft2c_of_center_delta_is_flat() {
        let (h, w) = (16, 8);
        let mut img = Array2::from_elem((h, w), Complex::new(0.0, 0.0));
        img[[h / 2, w / 2]] = Complex::new(1.0, 0.0);
        let k = fft2c(&img);
        let expect = 1.0 / ((h * w) as f64).sqrt();
        for v in k.iter() {
            assert_relative_eq!(v.re, expect, epsilon = 1e-12);
            assert!(v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn fft2c_parseval_and_roundtrip() {
        let img = rand_image(1, 32, 24, 3);
        let img2 = img.index_axis(ndarray::Axis(0), 0).to_owned();
        let k = fft2c(&img2);
        let ni: f64 = img2.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let nk: f64 = k.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert_relative_eq!(ni, nk, max_relative = 1e-6);
        let back = ifft2c(&k);
        for (a, b) in back.iter().zip(img2.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn fft2c_roundtrip_odd_sizes() {
        let img = rand_image(1, 15, 9, 4);
        let img2 = img.index_axis(ndarray::Axis(0), 0).to_owned();
        let back = ifft2c(&fft2c(&img2));
        for (a, b) in back.iter().zip(img2.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn mask_counts_for_reference_settings() {
        // N = 160, R = 8, acs = 0.06 -> 20 sampled lines, 10 of them ACS
        let m = make_mask(160, 8.0, 0.06, 0, 1).unwrap();
        assert_eq!(m.iter().filter(|&&v| v).count(), 20);
        let acs = acs_range(160, 0.06);
        assert_eq!(acs, 75..85);
        assert!(acs.clone().all(|i| m[i]));
    }

    #[test]
    fn mask_r1_samples_all_lines() {
        let m = make_mask(64, 1.0, 0.06, 0, 1).unwrap();
        assert!(m.iter().all(|&v| v));
    }

    #[test]
    fn mask_streams_reproducible_and_phase_distinct() {
        let a = make_mask(64, 4.0, 0.06, 2, 9).unwrap();
        let b = make_mask(64, 4.0, 0.06, 2, 9).unwrap();
        let c = make_mask(64, 4.0, 0.06, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mask_rejects_acs_budget_overflow() {
        // round(32/8) = 4 sampled, round(32*0.25) = 8 ACS -> reject
        assert!(matches!(
            make_mask(32, 8.0, 0.25, 0, 1),
            Err(KspaceError::AcsBudget { .. })
        ));
    }

    fn model(seed: u64, c: usize, p: usize, h: usize, w: usize, r: f64) -> AcquisitionModel<f64> {
        let coils64 = crate::physics::make_coil_maps(c, h, w, seed).unwrap();
        let masks = make_mask_set(h, p, r, 0.1, seed).unwrap();
        AcquisitionModel::new(coils64, masks).unwrap()
    }

    #[test]
    fn forward_zero_image_gives_zero_kspace() {
        let acq = model(5, 3, 2, 16, 16, 2.0);
        let x = Array3::from_elem((2, 16, 16), Complex::new(0.0, 0.0));
        let y = acq.forward(&x).unwrap();
        assert!(y.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn forward_collapses_to_fft_for_unit_coil_full_sampling() {
        let coils = Array3::from_elem((1, 16, 16), Complex::new(1.0, 0.0));
        let masks = make_mask_set(16, 2, 1.0, 0.1, 3).unwrap();
        let acq = AcquisitionModel::new(coils, masks).unwrap();
        let x = rand_image(2, 16, 16, 7);
        let y = acq.forward(&x).unwrap();
        for pi in 0..2 {
            let k = fft2c(&x.index_axis(ndarray::Axis(0), pi).to_owned());
            for i in 0..16 {
                for j in 0..16 {
                    assert!((y[[0, pi, i, j]] - k[[i, j]]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn adjoint_dot_product_identity() {
        let acq = model(11, 3, 2, 16, 12, 3.0);
        for trial in 0..20 {
            let x = rand_image(2, 16, 12, 100 + trial);
            let mut rng = RngStream::new(200 + trial, "kspace-test", 1);
            let y = Array4::from_shape_fn((3, 2, 16, 12), |_| {
                Complex::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0))
            });
            let ax = acq.forward(&x).unwrap();
            let aty = acq.adjoint(&y).unwrap();
            let lhs: Complex<f64> = ax.iter().zip(y.iter()).map(|(a, b)| a * b.conj()).sum();
            let rhs: Complex<f64> = x.iter().zip(aty.iter()).map(|(a, b)| a * b.conj()).sum();
            assert!((lhs - rhs).norm() / lhs.norm().max(1e-12) < 1e-6, "trial {trial}");
        }
    }

    #[test]
    fn adjoint_inverts_forward_at_r1() {
        let acq = model(13, 4, 2, 16, 16, 1.0);
        let x = rand_image(2, 16, 16, 17);
        let back = acq.adjoint(&acq.forward(&x).unwrap()).unwrap();
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn adjoint_ignores_unsampled_entries() {
        let acq = model(15, 2, 2, 16, 16, 4.0);
        let x = rand_image(2, 16, 16, 19);
        let y = acq.forward(&x).unwrap();
        // corrupt unsampled lines; adjoint must not see them
        let mut y2 = y.clone();
        for ci in 0..2 {
            for pi in 0..2 {
                for i in 0..16 {
                    if !acq.masks.lines[[pi, i]] {
                        for j in 0..16 {
                            y2[[ci, pi, i, j]] = Complex::new(9.0, -9.0);
                        }
                    }
                }
            }
        }
        let a1 = acq.adjoint(&y).unwrap();
        let a2 = acq.adjoint(&y2).unwrap();
        for (u, v) in a1.iter().zip(a2.iter()) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn dc_fixed_point_on_consistent_image() {
        let acq = model(21, 3, 2, 16, 16, 2.0);
        let truth = rand_image(2, 16, 16, 23);
        let y = acq.forward(&truth).unwrap();
        // x already data-consistent: dc(x) == x requires sum |S|^2 = 1
        let out = acq.dc(&truth, &y).unwrap();
        for (a, b) in out.iter().zip(truth.iter()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn dc_single_coil_replaces_sampled_lines_exactly() {
        let coils = Array3::from_elem((1, 16, 16), Complex::new(1.0, 0.0));
        let masks = make_mask_set(16, 1, 4.0, 0.1, 31).unwrap();
        let acq = AcquisitionModel::new(coils, masks).unwrap();
        let truth = rand_image(1, 16, 16, 37);
        let y = acq.forward(&truth).unwrap();
        let estimate = rand_image(1, 16, 16, 41);
        let out = acq.dc(&estimate, &y).unwrap();
        let k = fft2c(&out.index_axis(ndarray::Axis(0), 0).to_owned());
        for i in 0..16 {
            if acq.masks.lines[[0, i]] {
                for j in 0..16 {
                    assert!((k[[i, j]] - y[[0, 0, i, j]]).norm() < 1e-9);
                }
            }
        }
        // idempotence in the single-coil case
        let twice = acq.dc(&out, &y).unwrap();
        for (a, b) in twice.iter().zip(out.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn dc_fully_sampled_single_coil_ignores_estimate() {
        let coils = Array3::from_elem((1, 16, 16), Complex::new(1.0, 0.0));
        let masks = make_mask_set(16, 1, 1.0, 0.1, 43).unwrap();
        let acq = AcquisitionModel::new(coils, masks).unwrap();
        let truth = rand_image(1, 16, 16, 47);
        let y = acq.forward(&truth).unwrap();
        let estimate = rand_image(1, 16, 16, 53);
        let out = acq.dc(&estimate, &y).unwrap();
        for (a, b) in out.iter().zip(truth.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn noise_respects_mask_support() {
        let masks = make_mask_set(16, 2, 4.0, 0.1, 61).unwrap();
        let mut y = Array4::from_elem((2, 2, 16, 16), Complex::new(0.0, 0.0));
        add_noise(&mut y, &masks, 0.1, 67, 0);
        for ci in 0..2 {
            for pi in 0..2 {
                for i in 0..16 {
                    let sampled = masks.lines[[pi, i]];
                    for j in 0..16 {
                        let nz = y[[ci, pi, i, j]].norm() > 0.0;
                        assert_eq!(nz, sampled, "noise outside mask support");
                    }
                }
            }
        }
    }
}
