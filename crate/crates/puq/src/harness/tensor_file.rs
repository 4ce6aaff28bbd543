//! Binary tensor container and the weight manifests.
//!
//! Layout: 8-byte magic `PUQTNSR1`, u32 little-endian header length, ASCII
//! header (`dtype: ...`, `shape: ...`, `order: row-major` lines), raw
//! little-endian payload. Round trips are bit-exact.

use ndarray::{Array2, Array3};
use num_complex::Complex;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::diffnum::real::Real;
use crate::diffnum::tensor::Tensor;
use crate::fitting::{MlpConfig, MlpWeights};
use crate::recon::{UnrolledConfig, UnrolledModel};

pub const MAGIC: &[u8; 8] = b"PUQTNSR1";

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (expected PUQTNSR1)")]
    BadMagic,
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),
    #[error("header field missing or malformed: {0}")]
    BadHeader(String),
    #[error("payload holds {got} elements but shape {shape:?} needs {expected}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("tensor has dtype {got}, expected {expected}")]
    DtypeMismatch {
        expected: &'static str,
        got: &'static str,
    },
    #[error("manifest entry malformed: {0}")]
    BadManifest(String),
}

/// Supported payloads. Complex data is stored as interleaved f32 pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorPayload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C64(Vec<Complex<f32>>),
}

impl TensorPayload {
    pub fn dtype_name(&self) -> &'static str {
        match self {
            TensorPayload::F32(_) => "f32",
            TensorPayload::F64(_) => "f64",
            TensorPayload::C64(_) => "c64",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorPayload::F32(v) => v.len(),
            TensorPayload::F64(v) => v.len(),
            TensorPayload::C64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub payload: TensorPayload,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, payload: TensorPayload) -> Result<Self, TensorFileError> {
        let expected: usize = shape.iter().product();
        if expected != payload.len() {
            return Err(TensorFileError::LengthMismatch {
                shape,
                expected,
                got: payload.len(),
            });
        }
        Ok(TensorFile { shape, payload })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        let payload = match T::DTYPE_NAME {
            "f32" => TensorPayload::F32(t.data().iter().map(|v| v.into_f64() as f32).collect()),
            _ => TensorPayload::F64(t.data().iter().map(|v| v.into_f64()).collect()),
        };
        TensorFile {
            shape: t.shape().to_vec(),
            payload,
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>, TensorFileError> {
        let data: Vec<T> = match (&self.payload, T::DTYPE_NAME) {
            (TensorPayload::F32(v), "f32") => v.iter().map(|&x| T::of_f64(x as f64)).collect(),
            (TensorPayload::F64(v), "f64") => v.iter().map(|&x| T::of_f64(x)).collect(),
            (p, want) => {
                return Err(TensorFileError::DtypeMismatch {
                    expected: want,
                    got: p.dtype_name(),
                })
            }
        };
        Tensor::from_vec(&self.shape, data).map_err(|_| TensorFileError::LengthMismatch {
            shape: self.shape.clone(),
            expected: self.shape.iter().product(),
            got: self.payload.len(),
        })
    }

    pub fn from_complex3(x: &Array3<Complex<f32>>) -> Self {
        let (p, h, w) = x.dim();
        TensorFile {
            shape: vec![p, h, w],
            payload: TensorPayload::C64(x.iter().copied().collect()),
        }
    }

    pub fn to_complex3(&self) -> Result<Array3<Complex<f32>>, TensorFileError> {
        let TensorPayload::C64(v) = &self.payload else {
            return Err(TensorFileError::DtypeMismatch {
                expected: "c64",
                got: self.payload.dtype_name(),
            });
        };
        if self.shape.len() != 3 {
            return Err(TensorFileError::BadHeader(format!(
                "expected rank 3, got shape {:?}",
                self.shape
            )));
        }
        Array3::from_shape_vec((self.shape[0], self.shape[1], self.shape[2]), v.clone()).map_err(
            |_| TensorFileError::LengthMismatch {
                shape: self.shape.clone(),
                expected: self.shape.iter().product(),
                got: v.len(),
            },
        )
    }

    pub fn from_real3_f32(x: &Array3<f32>) -> Self {
        let (p, h, w) = x.dim();
        TensorFile {
            shape: vec![p, h, w],
            payload: TensorPayload::F32(x.iter().copied().collect()),
        }
    }

    pub fn to_real3_f32(&self) -> Result<Array3<f32>, TensorFileError> {
        let TensorPayload::F32(v) = &self.payload else {
            return Err(TensorFileError::DtypeMismatch {
                expected: "f32",
                got: self.payload.dtype_name(),
            });
        };
        if self.shape.len() != 3 {
            return Err(TensorFileError::BadHeader(format!(
                "expected rank 3, got shape {:?}",
                self.shape
            )));
        }
        Array3::from_shape_vec((self.shape[0], self.shape[1], self.shape[2]), v.clone()).map_err(
            |_| TensorFileError::LengthMismatch {
                shape: self.shape.clone(),
                expected: self.shape.iter().product(),
                got: v.len(),
            },
        )
    }

    pub fn from_map_f64(x: &Array2<f64>) -> Self {
        let (h, w) = x.dim();
        TensorFile {
            shape: vec![h, w],
            payload: TensorPayload::F64(x.iter().copied().collect()),
        }
    }

    pub fn to_map_f64(&self) -> Result<Array2<f64>, TensorFileError> {
        let TensorPayload::F64(v) = &self.payload else {
            return Err(TensorFileError::DtypeMismatch {
                expected: "f64",
                got: self.payload.dtype_name(),
            });
        };
        if self.shape.len() != 2 {
            return Err(TensorFileError::BadHeader(format!(
                "expected rank 2, got shape {:?}",
                self.shape
            )));
        }
        Array2::from_shape_vec((self.shape[0], self.shape[1]), v.clone()).map_err(|_| {
            TensorFileError::LengthMismatch {
                shape: self.shape.clone(),
                expected: self.shape.iter().product(),
                got: v.len(),
            }
        })
    }
}

pub fn save_tensor(path: &Path, t: &TensorFile) -> Result<(), TensorFileError> {
    let expected: usize = t.shape.iter().product();
    if expected != t.payload.len() {
        return Err(TensorFileError::LengthMismatch {
            shape: t.shape.clone(),
            expected,
            got: t.payload.len(),
        });
    }
    let shape_text = t
        .shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let header = format!(
        "dtype: {}\nshape: {}\norder: row-major\n",
        t.payload.dtype_name(),
        shape_text
    );
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(header.len() as u32).to_le_bytes())?;
    f.write_all(header.as_bytes())?;
    match &t.payload {
        TensorPayload::F32(v) => {
            for x in v {
                f.write_all(&x.to_le_bytes())?;
            }
        }
        TensorPayload::F64(v) => {
            for x in v {
                f.write_all(&x.to_le_bytes())?;
            }
        }
        TensorPayload::C64(v) => {
            for x in v {
                f.write_all(&x.re.to_le_bytes())?;
                f.write_all(&x.im.to_le_bytes())?;
            }
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<TensorFile, TensorFileError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut f, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(TensorFileError::BadMagic);
    }
    let mut len_bytes = [0u8; 4];
    read_exact(&mut f, &mut len_bytes, "header length")?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    read_exact(&mut f, &mut header, "header")?;
    let header =
        String::from_utf8(header).map_err(|e| TensorFileError::BadHeader(e.to_string()))?;
    let mut dtype = None;
    let mut shape: Option<Vec<usize>> = None;
    let mut order = None;
    for line in header.lines() {
        let Some((key, value)) = line.split_once(':') else {
            return Err(TensorFileError::BadHeader(line.to_string()));
        };
        match key.trim() {
            "dtype" => dtype = Some(value.trim().to_string()),
            "shape" => {
                let dims = value
                    .split_whitespace()
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| TensorFileError::BadHeader(e.to_string()))?;
                shape = Some(dims);
            }
            "order" => order = Some(value.trim().to_string()),
            other => return Err(TensorFileError::BadHeader(other.to_string())),
        }
    }
    let dtype = dtype.ok_or_else(|| TensorFileError::BadHeader("dtype".into()))?;
    let shape = shape.ok_or_else(|| TensorFileError::BadHeader("shape".into()))?;
    match order.as_deref() {
        Some("row-major") => {}
        other => return Err(TensorFileError::BadHeader(format!("order {other:?}"))),
    }
    let n: usize = shape.iter().product();
    let mut raw = Vec::new();
    f.read_to_end(&mut raw)?;
    let payload = match dtype.as_str() {
        "f32" => {
            expect_len(raw.len(), n * 4, &shape)?;
            TensorPayload::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        "f64" => {
            expect_len(raw.len(), n * 8, &shape)?;
            TensorPayload::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        "c64" => {
            expect_len(raw.len(), n * 8, &shape)?;
            TensorPayload::C64(
                raw.chunks_exact(8)
                    .map(|c| {
                        Complex::new(
                            f32::from_le_bytes(c[0..4].try_into().unwrap()),
                            f32::from_le_bytes(c[4..8].try_into().unwrap()),
                        )
                    })
                    .collect(),
            )
        }
        other => return Err(TensorFileError::UnknownDtype(other.to_string())),
    };
    Ok(TensorFile { shape, payload })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), TensorFileError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            TensorFileError::Truncated(what.to_string())
        } else {
            TensorFileError::Io(e)
        }
    })
}

fn expect_len(got: usize, want: usize, shape: &[usize]) -> Result<(), TensorFileError> {
    if got != want {
        return Err(TensorFileError::LengthMismatch {
            shape: shape.to_vec(),
            expected: want,
            got,
        });
    }
    Ok(())
}

/// Write the unrolled weights as one tensor file per parameter plus a
/// manifest listing `(iteration, layer, tensor name, shape)`.
pub fn save_unrolled_weights<T: Real>(
    dir: &Path,
    model: &UnrolledModel<T>,
) -> Result<(), TensorFileError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (it, den) in model.weights.iterations.iter().enumerate() {
        for (l, layer) in den.layers.iter().enumerate() {
            for (name, tensor) in [("weight", &layer.weight), ("bias", &layer.bias)] {
                let file = format!("it{it:02}_l{l}_{name}.tnsr");
                save_tensor(&dir.join(&file), &TensorFile::from_tensor(tensor))?;
                let shape = tensor
                    .shape()
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join("x");
                manifest.push_str(&format!(
                    "iteration={it} layer={l} tensor={name} shape={shape} file={file}\n"
                ));
            }
        }
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

pub fn load_unrolled_weights<T: Real>(
    dir: &Path,
    cfg: UnrolledConfig,
) -> Result<UnrolledModel<T>, TensorFileError> {
    let tensors = load_manifest_tensors(dir)?;
    UnrolledModel::from_flat(cfg, tensors)
        .map_err(|e| TensorFileError::BadManifest(e.to_string()))
}

/// MLP weights in the same manifest format (iteration fixed at 0).
pub fn save_mlp_weights<T: Real>(dir: &Path, mlp: &MlpWeights<T>) -> Result<(), TensorFileError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (l, layer) in mlp.layers.iter().enumerate() {
        for (name, tensor) in [("weight", &layer.weight), ("bias", &layer.bias)] {
            let file = format!("it00_l{l}_{name}.tnsr");
            save_tensor(&dir.join(&file), &TensorFile::from_tensor(tensor))?;
            let shape = tensor
                .shape()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            manifest.push_str(&format!(
                "iteration=0 layer={l} tensor={name} shape={shape} file={file}\n"
            ));
        }
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

pub fn load_mlp_weights<T: Real>(
    dir: &Path,
    cfg: MlpConfig,
) -> Result<MlpWeights<T>, TensorFileError> {
    let tensors = load_manifest_tensors(dir)?;
    MlpWeights::from_flat(cfg, tensors).map_err(|e| TensorFileError::BadManifest(e.to_string()))
}

fn load_manifest_tensors<T: Real>(dir: &Path) -> Result<Vec<Tensor<T>>, TensorFileError> {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let mut tensors = Vec::new();
    for line in manifest.lines() {
        let file = line
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix("file="))
            .ok_or_else(|| TensorFileError::BadManifest(line.to_string()))?;
        tensors.push(load_tensor(&dir.join(file))?.to_tensor::<T>()?);
    }
    Ok(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnum::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bit_exact_for_random_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let mut rng = RngStream::new(5, "tensorfile", 0);
        let data: Vec<f32> = (0..24).map(|_| rng.range(-10.0, 10.0) as f32).collect();
        let t = TensorFile::new(vec![2, 3, 4], TensorPayload::F32(data.clone())).unwrap();
        save_tensor(&path, &t).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back, t);
        let TensorPayload::F32(v) = back.payload else {
            panic!()
        };
        for (a, b) in v.iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupted_magic_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let t = TensorFile::new(vec![2], TensorPayload::F64(vec![1.0, 2.0])).unwrap();
        save_tensor(&path, &t).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_tensor(&path), Err(TensorFileError::BadMagic)));
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let t = TensorFile::new(vec![4], TensorPayload::F32(vec![1.0; 4])).unwrap();
        save_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_tensor(&path),
            Err(TensorFileError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn shape_payload_mismatch_is_rejected() {
        assert!(matches!(
            TensorFile::new(vec![3, 3], TensorPayload::F32(vec![0.0; 8])),
            Err(TensorFileError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn unrolled_weight_manifest_round_trip() {
        use crate::recon::UnrolledConfig;
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = UnrolledConfig::new(2);
        cfg.iterations = 2;
        cfg.denoiser.hidden_channels = 4;
        let model = crate::recon::UnrolledModel::<f32>::init(cfg.clone(), 9);
        save_unrolled_weights(dir.path(), &model).unwrap();
        let back = load_unrolled_weights::<f32>(dir.path(), cfg).unwrap();
        for (a, b) in model.flat_params().iter().zip(back.flat_params()) {
            assert_eq!(a.data(), b.data());
        }
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains("iteration=1 layer=4 tensor=bias"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn round_trip_any_payload(data in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.tnsr");
            let n = data.len();
            let t = TensorFile::new(vec![n], TensorPayload::F64(data)).unwrap();
            save_tensor(&path, &t).unwrap();
            prop_assert_eq!(load_tensor(&path).unwrap(), t);
        }
    }
}
