//! Scalar abstraction over the two supported dtypes.
//!
//! Training runs in f32; gradient and operator verification runs in f64.

use num_traits::{Float, NumAssign};
use rustfft::FftNum;

/// Floating-point element type usable in tensors, FFTs and k-space operators.
pub trait Real: Float + FftNum + NumAssign + Send + Sync + 'static {
    /// Dtype tag used by the tensor-file container.
    const DTYPE_NAME: &'static str;

    fn of_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Real for f32 {
    const DTYPE_NAME: &'static str = "f32";

    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const DTYPE_NAME: &'static str = "f64";

    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
}
