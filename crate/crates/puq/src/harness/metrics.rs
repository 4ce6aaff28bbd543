//! Parameter-map quality metrics and the metrics CSV.

use ndarray::Array2;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("reference has zero norm on the mask")]
    ZeroReference,
    #[error("dynamic range must be positive, got {0}")]
    ZeroRange(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("metrics csv parse error: {0}")]
    Parse(String),
}

fn check_shapes(
    est: &Array2<f64>,
    reference: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<(), MetricsError> {
    if est.dim() != reference.dim() || est.dim() != mask.dim() {
        return Err(MetricsError::Shape(format!(
            "est {:?} vs ref {:?} vs mask {:?}",
            est.dim(),
            reference.dim(),
            mask.dim()
        )));
    }
    Ok(())
}

/// `|| (est - ref) . mask ||_2 / || ref . mask ||_2`.
pub fn nrmse(
    est: &Array2<f64>,
    reference: &Array2<f64>,
    mask: &Array2<bool>,
) -> Result<f64, MetricsError> {
    check_shapes(est, reference, mask)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut count = 0usize;
    for ((e, r), &m) in est.iter().zip(reference.iter()).zip(mask.iter()) {
        if m {
            num += (e - r) * (e - r);
            den += r * r;
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptyMask);
    }
    if den <= 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    Ok((num / den).sqrt())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let mut k = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            *v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            sum += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    k
}

/// Mean local SSIM over the mask: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03. The dynamic range defaults to max - min of the
/// reference over the mask; near image borders the window is truncated and
/// its weights renormalized.
pub fn ssim(
    est: &Array2<f64>,
    reference: &Array2<f64>,
    mask: &Array2<bool>,
    dynamic_range: Option<f64>,
) -> Result<f64, MetricsError> {
    check_shapes(est, reference, mask)?;
    let (h, w) = est.dim();
    if !mask.iter().any(|&m| m) {
        return Err(MetricsError::EmptyMask);
    }
    let range = match dynamic_range {
        Some(l) => l,
        None => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (r, &m) in reference.iter().zip(mask.iter()) {
                if m {
                    lo = lo.min(*r);
                    hi = hi.max(*r);
                }
            }
            hi - lo
        }
    };
    if range <= 0.0 {
        return Err(MetricsError::ZeroRange(range));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let kernel = gaussian_kernel();
    let half = SSIM_WINDOW / 2;

    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..h {
        for j in 0..w {
            if !mask[[i, j]] {
                continue;
            }
            let (mut wsum, mut mx, mut my) = (0.0, 0.0, 0.0);
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for di in 0..SSIM_WINDOW {
                let ii = i as isize + di as isize - half as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for dj in 0..SSIM_WINDOW {
                    let jj = j as isize + dj as isize - half as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let wgt = kernel[di][dj];
                    let x = est[[ii as usize, jj as usize]];
                    let y = reference[[ii as usize, jj as usize]];
                    wsum += wgt;
                    mx += wgt * x;
                    my += wgt * y;
                    sxx += wgt * x * x;
                    syy += wgt * y * y;
                    sxy += wgt * x * y;
                }
            }
            mx /= wsum;
            my /= wsum;
            let vx = sxx / wsum - mx * mx;
            let vy = syy / wsum - my * my;
            let cxy = sxy / wsum - mx * my;
            let local = ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            acc += local;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// One evaluation result row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub variant: String,
    pub param: String,
    pub accel: u32,
    pub seed: u64,
    pub nrmse: f64,
    pub ssim: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "variant,param,r,seed,nrmse,ssim,seconds";

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<(), MetricsError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.variant, r.param, r.accel, r.seed, r.nrmse, r.ssim, r.seconds
        )?;
    }
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>, MetricsError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(MetricsError::Parse(format!(
                "unexpected header {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(MetricsError::Parse(format!("line {}: {line}", k + 2)));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| MetricsError::Parse(format!("line {}: {e}", k + 2)))
        };
        out.push(MetricsRecord {
            variant: cols[0].to_string(),
            param: cols[1].to_string(),
            accel: cols[2]
                .parse()
                .map_err(|e| MetricsError::Parse(format!("line {}: {e}", k + 2)))?,
            seed: cols[3]
                .parse()
                .map_err(|e| MetricsError::Parse(format!("line {}: {e}", k + 2)))?,
            nrmse: parse_f(cols[4])?,
            ssim: parse_f(cols[5])?,
            seconds: parse_f(cols[6])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn full_mask(h: usize, w: usize) -> Array2<bool> {
        Array2::from_elem((h, w), true)
    }

    #[test]
    fn nrmse_identity_zero_estimate_and_constant_shift() {
        let x = Array2::from_shape_fn((8, 8), |(i, j)| 1.0 + (i * 8 + j) as f64);
        let mask = full_mask(8, 8);
        assert_eq!(nrmse(&x, &x, &mask).unwrap(), 0.0);
        let zero = Array2::zeros((8, 8));
        assert_relative_eq!(nrmse(&zero, &x, &mask).unwrap(), 1.0, max_relative = 1e-12);

        // est = ref + c on a constant reference r -> c / r
        let r = Array2::from_elem((8, 8), 5.0);
        let est = Array2::from_elem((8, 8), 5.0 + 0.75);
        assert_relative_eq!(nrmse(&est, &r, &mask).unwrap(), 0.15, max_relative = 1e-12);
    }

    #[test]
    fn nrmse_rejects_zero_reference_and_empty_mask() {
        let zero = Array2::zeros((4, 4));
        let est = Array2::from_elem((4, 4), 1.0);
        assert!(matches!(
            nrmse(&est, &zero, &full_mask(4, 4)),
            Err(MetricsError::ZeroReference)
        ));
        let none = Array2::from_elem((4, 4), false);
        assert!(matches!(
            nrmse(&est, &est, &none),
            Err(MetricsError::EmptyMask)
        ));
    }

    #[test]
    fn ssim_self_is_one() {
        let x = Array2::from_shape_fn((16, 16), |(i, j)| ((i * 3 + j * 7) % 13) as f64);
        let v = ssim(&x, &x, &full_mask(16, 16), None).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_uniform_shift_matches_closed_form_on_constant_region() {
        // constant reference patch: every window has mu_x = r, sigma = 0.
        // With est = ref + L/10 the local SSIM reduces to the luminance term
        // (2 r (r+c) + C1) / (r^2 + (r+c)^2 + C1).
        let r = 10.0;
        let l = 4.0;
        let c = l / 10.0;
        let reference = Array2::from_elem((32, 32), r);
        let est = Array2::from_elem((32, 32), r + c);
        // interior mask so every window sees constant statistics
        let mask = Array2::from_shape_fn((32, 32), |(i, j)| (6..26).contains(&i) && (6..26).contains(&j));
        let got = ssim(&est, &reference, &mask, Some(l)).unwrap();
        let c1 = (SSIM_K1 * l).powi(2);
        let expect = (2.0 * r * (r + c) + c1) / (r * r + (r + c) * (r + c) + c1);
        assert_relative_eq!(got, expect, max_relative = 1e-6);
    }

    #[test]
    fn ssim_symmetric_under_external_range() {
        let a = Array2::from_shape_fn((16, 16), |(i, j)| (i as f64).sin() + 0.3 * j as f64);
        let b = Array2::from_shape_fn((16, 16), |(i, j)| (j as f64).cos() + 0.2 * i as f64);
        let mask = full_mask(16, 16);
        let ab = ssim(&a, &b, &mask, Some(5.0)).unwrap();
        let ba = ssim(&b, &a, &mask, Some(5.0)).unwrap();
        assert_relative_eq!(ab, ba, max_relative = 1e-12);
    }

    #[test]
    fn ssim_rejects_flat_reference_without_range() {
        let flat = Array2::from_elem((8, 8), 3.0);
        assert!(matches!(
            ssim(&flat, &flat, &full_mask(8, 8), None),
            Err(MetricsError::ZeroRange(_))
        ));
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let records = vec![MetricsRecord {
            variant: "puq".into(),
            param: "T2".into(),
            accel: 4,
            seed: 1,
            nrmse: 0.123456789,
            ssim: 0.987654321,
            seconds: 12.5,
        }];
        write_metrics_csv(&path, &records).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back, records);
    }
}
