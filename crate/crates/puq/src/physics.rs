//! Synthetic ground truth: tissue phantoms, qMRI signal models for
//! T2-prepared and MOLLI acquisitions, and simulated coil sensitivities.
//!
//! All functions are pure in `(spec, seed)` and evaluate in f64; the caller
//! casts to the training dtype at the acquisition boundary.

use ndarray::{Array2, Array3};
use num_complex::Complex;
use thiserror::Error;

use crate::diffnum::rng::{purpose, RngStream};

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("relaxation time must be positive, got {0} ms")]
    NonPositiveRelaxation(f64),
    #[error("proton density must be non-negative, got {0}")]
    NegativeDensity(f64),
    #[error("negative timing value {0} ms")]
    NegativeTiming(f64),
    #[error("phantom grid must be non-empty, got {h}x{w}")]
    EmptyGrid { h: usize, w: usize },
    #[error("sequence preset invalid: {0}")]
    BadPreset(String),
    #[error("coil count must be at least 1")]
    NoCoils,
    #[error("map shapes disagree: {0}")]
    ShapeMismatch(String),
}

/// Tissue parameter triple. Relaxation times in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tissue {
    pub t1_ms: f64,
    pub t2_ms: f64,
    pub pd: f64,
}

impl Tissue {
    fn validate(&self) -> Result<(), PhysicsError> {
        if self.t1_ms <= 0.0 {
            return Err(PhysicsError::NonPositiveRelaxation(self.t1_ms));
        }
        if self.t2_ms <= 0.0 {
            return Err(PhysicsError::NonPositiveRelaxation(self.t2_ms));
        }
        if self.pd < 0.0 {
            return Err(PhysicsError::NegativeDensity(self.pd));
        }
        Ok(())
    }
}

/// Rotated ellipse painted with one tissue.
#[derive(Debug, Clone)]
pub struct Ellipse {
    /// (row, col) center in pixels.
    pub center: (f64, f64),
    /// (row, col) semi-axes in pixels.
    pub semi_axes: (f64, f64),
    pub rotation_rad: f64,
    pub tissue: Tissue,
}

impl Ellipse {
    pub fn contains(&self, row: f64, col: f64) -> bool {
        let dr = row - self.center.0;
        let dc = col - self.center.1;
        let (s, c) = self.rotation_rad.sin_cos();
        let u = c * dr + s * dc;
        let v = -s * dr + c * dc;
        let (a, b) = self.semi_axes;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    }
}

/// Ordered ellipse list over a grid; later regions overwrite earlier ones.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub background: Tissue,
    pub regions: Vec<Ellipse>,
}

/// Value ranges used when sampling random phantoms.
#[derive(Debug, Clone)]
pub struct PhantomRanges {
    pub regions: (usize, usize),
    pub t1_ms: (f64, f64),
    pub t2_ms: (f64, f64),
    pub pd: (f64, f64),
}

impl Default for PhantomRanges {
    fn default() -> Self {
        PhantomRanges {
            regions: (6, 10),
            t1_ms: (300.0, 2000.0),
            t2_ms: (40.0, 250.0),
            pd: (0.5, 1.0),
        }
    }
}

impl PhantomSpec {
    /// Random head-style phantom: one large body ellipse plus internal
    /// compartments, drawn from the `(seed, "phantom", index)` stream.
    pub fn random(height: usize, width: usize, ranges: &PhantomRanges, seed: u64, index: u64) -> Self {
        let mut rng = RngStream::new(seed, purpose::PHANTOM, index);
        let h = height as f64;
        let w = width as f64;
        let n_regions = ranges.regions.0 + rng.below(ranges.regions.1 - ranges.regions.0 + 1);
        let draw_tissue = |rng: &mut RngStream| Tissue {
            t1_ms: rng.range(ranges.t1_ms.0, ranges.t1_ms.1),
            t2_ms: rng.range(ranges.t2_ms.0, ranges.t2_ms.1),
            pd: rng.range(ranges.pd.0, ranges.pd.1),
        };
        let mut regions = Vec::with_capacity(n_regions);
        let body_tissue = draw_tissue(&mut rng);
        regions.push(Ellipse {
            center: (h / 2.0 + rng.range(-1.0, 1.0), w / 2.0 + rng.range(-1.0, 1.0)),
            semi_axes: (h * rng.range(0.36, 0.42), w * rng.range(0.36, 0.42)),
            rotation_rad: rng.range(-0.3, 0.3),
            tissue: body_tissue,
        });
        for _ in 1..n_regions {
            let tissue = draw_tissue(&mut rng);
            let scale = h.min(w);
            regions.push(Ellipse {
                center: (
                    h / 2.0 + rng.range(-0.25, 0.25) * h,
                    w / 2.0 + rng.range(-0.25, 0.25) * w,
                ),
                semi_axes: (
                    scale * rng.range(0.05, 0.18),
                    scale * rng.range(0.05, 0.18),
                ),
                rotation_rad: rng.range(-std::f64::consts::PI, std::f64::consts::PI),
                tissue,
            });
        }
        PhantomSpec {
            height,
            width,
            background: Tissue {
                t1_ms: 1000.0,
                t2_ms: 100.0,
                pd: 0.0,
            },
            regions,
        }
    }
}

/// Rasterized tissue maps plus the proton-density foreground.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub t1_ms: Array2<f64>,
    pub t2_ms: Array2<f64>,
    pub pd: Array2<f64>,
    pub foreground: Array2<bool>,
}

/// Rasterize a phantom spec. Pixel centers are sampled; later regions
/// overwrite earlier ones; foreground is `pd > 0`.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom, PhysicsError> {
    if spec.height == 0 || spec.width == 0 {
        return Err(PhysicsError::EmptyGrid {
            h: spec.height,
            w: spec.width,
        });
    }
    spec.background.validate()?;
    for r in &spec.regions {
        r.tissue.validate()?;
    }
    let shape = (spec.height, spec.width);
    let mut t1 = Array2::from_elem(shape, spec.background.t1_ms);
    let mut t2 = Array2::from_elem(shape, spec.background.t2_ms);
    let mut pd = Array2::from_elem(shape, spec.background.pd);
    for region in &spec.regions {
        for i in 0..spec.height {
            for j in 0..spec.width {
                if region.contains(i as f64, j as f64) {
                    t1[[i, j]] = region.tissue.t1_ms;
                    t2[[i, j]] = region.tissue.t2_ms;
                    pd[[i, j]] = region.tissue.pd;
                }
            }
        }
    }
    let foreground = pd.mapv(|v| v > 0.0);
    Ok(Phantom {
        t1_ms: t1,
        t2_ms: t2,
        pd,
        foreground,
    })
}

/// Acquisition timing schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    T2Prep,
    Molli,
}

#[derive(Debug, Clone)]
pub struct SequencePreset {
    pub kind: SequenceKind,
    pub timings_ms: Vec<f64>,
}

impl SequencePreset {
    /// T2-preparation schedule TEprep = [0, 25, 35, 45, 65, 85, 105, 125] ms.
    pub fn t2prep_default() -> Self {
        SequencePreset {
            kind: SequenceKind::T2Prep,
            timings_ms: vec![0.0, 25.0, 35.0, 45.0, 65.0, 85.0, 105.0, 125.0],
        }
    }

    /// MOLLI inversion times
    /// TI = [251, 400, 1251, 1400, 2251, 2400, 3251, 4251] ms.
    pub fn molli_default() -> Self {
        SequencePreset {
            kind: SequenceKind::Molli,
            timings_ms: vec![251.0, 400.0, 1251.0, 1400.0, 2251.0, 2400.0, 3251.0, 4251.0],
        }
    }

    pub fn phases(&self) -> usize {
        self.timings_ms.len()
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        if self.timings_ms.len() < 2 {
            return Err(PhysicsError::BadPreset(format!(
                "need at least 2 phases, got {}",
                self.timings_ms.len()
            )));
        }
        match self.kind {
            SequenceKind::T2Prep => {
                if let Some(&t) = self.timings_ms.iter().find(|&&t| t < 0.0) {
                    return Err(PhysicsError::NegativeTiming(t));
                }
            }
            SequenceKind::Molli => {
                let increasing = self.timings_ms.windows(2).all(|w| w[1] > w[0]);
                if !increasing || self.timings_ms[0] < 0.0 {
                    return Err(PhysicsError::BadPreset(
                        "MOLLI inversion times must be strictly increasing and non-negative".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// T2-prepared signal magnitude `S = PD * exp(-TE / T2)`.
pub fn t2prep_signal(pd: f64, t2_ms: f64, te_ms: f64) -> Result<f64, PhysicsError> {
    if t2_ms <= 0.0 {
        return Err(PhysicsError::NonPositiveRelaxation(t2_ms));
    }
    if pd < 0.0 {
        return Err(PhysicsError::NegativeDensity(pd));
    }
    if te_ms < 0.0 {
        return Err(PhysicsError::NegativeTiming(te_ms));
    }
    Ok(pd * (-te_ms / t2_ms).exp())
}

/// MOLLI apparent-recovery magnitude `S = |A - B * exp(-TI / T1*)|`.
pub fn molli_signal(a: f64, b: f64, t1star_ms: f64, ti_ms: f64) -> Result<f64, PhysicsError> {
    if t1star_ms <= 0.0 {
        return Err(PhysicsError::NonPositiveRelaxation(t1star_ms));
    }
    if a <= 0.0 || b <= 0.0 {
        return Err(PhysicsError::NegativeDensity(a.min(b)));
    }
    if ti_ms < 0.0 {
        return Err(PhysicsError::NegativeTiming(ti_ms));
    }
    Ok((a - b * (-ti_ms / t1star_ms).exp()).abs())
}

/// Look-Locker correction `T1 = T1* (B/A - 1)`.
pub fn molli_t1(a: f64, b: f64, t1star_ms: f64) -> f64 {
    t1star_ms * (b / a - 1.0)
}

/// Smooth deterministic background phase shared by all phases.
fn background_phase(i: usize, j: usize, h: usize, w: usize) -> f64 {
    let u = i as f64 / h as f64 - 0.5;
    let v = j as f64 / w as f64 - 0.5;
    std::f64::consts::PI
        * (0.3 * u + 0.2 * v + 0.15 * u * v + 0.025 * (2.0 * std::f64::consts::PI * u).sin())
}

/// Evaluate the signal model at every phase of the preset.
///
/// Output is `(phase, row, col)` complex with a shared smooth spatial phase.
/// The MOLLI model uses ideal inversion `A = PD, B = 2 PD`, so `T1* = T1`.
/// Optional complex Gaussian noise (per-component std = mean foreground
/// first-phase magnitude / SNR) can be injected here; the standard pipeline
/// instead injects noise per coil in k-space during acquisition.
pub fn simulate_phases(
    phantom: &Phantom,
    preset: &SequencePreset,
    noise: Option<(f64, &mut RngStream)>,
) -> Result<Array3<Complex<f64>>, PhysicsError> {
    preset.validate()?;
    let (h, w) = phantom.pd.dim();
    if phantom.t1_ms.dim() != (h, w) || phantom.t2_ms.dim() != (h, w) {
        return Err(PhysicsError::ShapeMismatch(format!(
            "pd {:?} vs t1 {:?} vs t2 {:?}",
            phantom.pd.dim(),
            phantom.t1_ms.dim(),
            phantom.t2_ms.dim()
        )));
    }
    let p = preset.phases();
    let mut out = Array3::zeros((p, h, w));
    for (pi, &t) in preset.timings_ms.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                let pd = phantom.pd[[i, j]];
                if pd <= 0.0 {
                    continue;
                }
                let mag = match preset.kind {
                    SequenceKind::T2Prep => t2prep_signal(pd, phantom.t2_ms[[i, j]], t)?,
                    SequenceKind::Molli => molli_signal(pd, 2.0 * pd, phantom.t1_ms[[i, j]], t)?,
                };
                let phi = background_phase(i, j, h, w);
                out[[pi, i, j]] = Complex::from_polar(mag, phi);
            }
        }
    }
    if let Some((snr, rng)) = noise {
        let sigma = noise_sigma(&out, &phantom.foreground, snr);
        for v in out.iter_mut() {
            *v += Complex::new(sigma * rng.normal(), sigma * rng.normal());
        }
    }
    Ok(out)
}

/// Per-component noise std for a target SNR: mean foreground magnitude of
/// the first phase divided by SNR.
pub fn noise_sigma(phases: &Array3<Complex<f64>>, foreground: &Array2<bool>, snr: f64) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    let (h, w) = foreground.dim();
    for i in 0..h {
        for j in 0..w {
            if foreground[[i, j]] {
                acc += phases[[0, i, j]].norm();
                n += 1;
            }
        }
    }
    if n == 0 {
        return 0.0;
    }
    acc / n as f64 / snr
}

/// Cast a complex f64 stack to the working dtype.
pub fn cast_complex3<T: crate::diffnum::real::Real>(
    x: &Array3<Complex<f64>>,
) -> Array3<Complex<T>> {
    x.mapv(|v| Complex::new(T::of_f64(v.re), T::of_f64(v.im)))
}

/// Simulated coil sensitivities: Gaussian magnitude lobes centered on
/// distinct border locations with smooth linear phase ramps, jointly
/// normalized so that `sum_c |S_c|^2 = 1` at every pixel.
pub fn make_coil_maps(
    n_coils: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Array3<Complex<f64>>, PhysicsError> {
    if n_coils == 0 {
        return Err(PhysicsError::NoCoils);
    }
    if h == 0 || w == 0 {
        return Err(PhysicsError::EmptyGrid { h, w });
    }
    let mut rng = RngStream::new(seed, purpose::COIL, 0);
    let mut maps = Array3::zeros((n_coils, h, w));
    let sigma = 0.6 * h.max(w) as f64;
    for c in 0..n_coils {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64 + rng.range(-0.1, 0.1);
        let (cy, cx) = (
            h as f64 / 2.0 + 0.55 * h as f64 * angle.sin(),
            w as f64 / 2.0 + 0.55 * w as f64 * angle.cos(),
        );
        let (ramp_r, ramp_c, phase0) = (
            rng.range(-0.5, 0.5) * std::f64::consts::PI / h as f64,
            rng.range(-0.5, 0.5) * std::f64::consts::PI / w as f64,
            rng.range(-std::f64::consts::PI, std::f64::consts::PI),
        );
        for i in 0..h {
            for j in 0..w {
                let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                let mag = (-d2 / (2.0 * sigma * sigma)).exp();
                let phi = phase0 + ramp_r * i as f64 + ramp_c * j as f64;
                maps[[c, i, j]] = Complex::from_polar(mag, phi);
            }
        }
    }
    for i in 0..h {
        for j in 0..w {
            let norm: f64 = (0..n_coils).map(|c| maps[[c, i, j]].norm_sqr()).sum();
            let scale = 1.0 / norm.sqrt();
            for c in 0..n_coils {
                maps[[c, i, j]] *= scale;
            }
        }
    }
    Ok(maps)
}
