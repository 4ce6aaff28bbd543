//! Map exports for visual inspection: 16-bit PGM and CSV.

use ndarray::Array2;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("map contains non-finite values")]
    NonFinite,
    #[error("csv parse error: {0}")]
    Parse(String),
}

/// Binary P5 PGM with 16-bit big-endian samples. The linear display window
/// `[min, max]` is recorded in a comment line; its endpoints map to 0 and
/// 65535. A constant map exports as all zeros.
pub fn export_pgm16(map: &Array2<f64>, path: &Path) -> Result<(), ExportError> {
    if map.iter().any(|v| !v.is_finite()) {
        return Err(ExportError::NonFinite);
    }
    let (h, w) = map.dim();
    let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "P5")?;
    writeln!(f, "# window {lo} {hi}")?;
    writeln!(f, "{w} {h}")?;
    writeln!(f, "65535")?;
    for v in map.iter() {
        let s = if span > 0.0 {
            (((v - lo) / span) * 65535.0).round() as u16
        } else {
            0
        };
        f.write_all(&s.to_be_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Row-major CSV with a column-index header line.
pub fn export_csv(map: &Array2<f64>, path: &Path) -> Result<(), ExportError> {
    if map.iter().any(|v| !v.is_finite()) {
        return Err(ExportError::NonFinite);
    }
    let (h, w) = map.dim();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..w).map(|j| format!("c{j}")).collect();
    writeln!(f, "{}", header.join(","))?;
    for i in 0..h {
        let row: Vec<String> = (0..w).map(|j| map[[i, j]].to_string()).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Parse back an [`export_csv`] file.
pub fn import_csv(path: &Path) -> Result<Array2<f64>, ExportError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| ExportError::Parse("empty file".into()))?;
    let w = header.split(',').count();
    let mut data = Vec::new();
    let mut h = 0usize;
    for line in lines {
        for cell in line.split(',') {
            data.push(
                cell.parse::<f64>()
                    .map_err(|e| ExportError::Parse(e.to_string()))?,
            );
        }
        h += 1;
    }
    Array2::from_shape_vec((h, w), data).map_err(|e| ExportError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_window_endpoints_map_to_extremes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mut map = Array2::zeros((2, 3));
        map[[0, 0]] = -4.0;
        map[[1, 2]] = 12.0;
        export_pgm16(&map, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text_end = bytes
            .windows(6)
            .position(|w| w == b"65535\n")
            .map(|p| p + 6)
            .unwrap();
        let samples: Vec<u16> = bytes[text_end..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(samples.len(), 6);
        assert_eq!(samples[0], 0);
        assert_eq!(samples[5], 65535);
        let header = String::from_utf8_lossy(&bytes[..text_end]);
        assert!(header.contains("# window -4 12"));
    }

    #[test]
    fn pgm_constant_map_is_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let map = Array2::from_elem((3, 3), 7.5);
        export_pgm16(&map, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text_end = bytes
            .windows(6)
            .position(|w| w == b"65535\n")
            .map(|p| p + 6)
            .unwrap();
        let samples: Vec<u16> = bytes[text_end..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert!(samples.iter().all(|&s| s == samples[0]));
    }

    #[test]
    fn csv_round_trip_shortest_decimal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let map = Array2::from_shape_fn((4, 5), |(i, j)| (i as f64 + 0.1) / (j as f64 + 0.7));
        export_csv(&map, &path).unwrap();
        let back = import_csv(&path).unwrap();
        assert_eq!(back, map);
    }
}
