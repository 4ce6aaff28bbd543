//! Gradient clipping and the Adam optimizer.

use super::real::Real;
use super::tensor::{DiffError, Tensor};

/// First/second-moment accumulators for one parameter list.
///
/// Reference constants: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(param_lens: &[usize]) -> Self {
        AdamState {
            m: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &[&Tensor<T>]) -> Self {
        Self::new(&params.iter().map(|p| p.len()).collect::<Vec<_>>())
    }
}

/// Global L2-norm clipping: if the joint norm exceeds `threshold`, every
/// gradient is scaled by `threshold / norm`. Returns the pre-clip norm.
pub fn clip_grad_norm<T: Real>(grads: &mut [Tensor<T>], threshold: f64) -> Result<f64, DiffError> {
    if threshold <= 0.0 {
        return Err(DiffError::InvalidThreshold(threshold));
    }
    let norm_sq: f64 = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let x = v.into_f64();
            x * x
        })
        .sum();
    let norm = norm_sq.sqrt();
    if norm > threshold {
        let scale = T::of_f64(threshold / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * scale;
            }
        }
    }
    Ok(norm)
}

/// One bias-corrected Adam update over an aligned (params, grads) list.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), DiffError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DiffError::Invalid(format!(
            "adam_step arity mismatch: {} params, {} grads, {} states",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of_f64(state.beta1);
    let b2 = T::of_f64(state.beta2);
    let one_m_b1 = T::of_f64(1.0 - state.beta1);
    let one_m_b2 = T::of_f64(1.0 - state.beta2);
    let corr1 = T::of_f64(1.0 - state.beta1.powi(t));
    let corr2 = T::of_f64(1.0 - state.beta2.powi(t));
    let eps = T::of_f64(state.eps);
    let alpha = T::of_f64(lr);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.shape() != g.shape() {
            return Err(DiffError::Shape {
                context: "adam_step",
                expected: format!("{:?}", p.shape()),
                got: format!("{:?}", g.shape()),
            });
        }
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mv = b1 * *mv + one_m_b1 * gv;
            *vv = b2 * *vv + one_m_b2 * gv * gv;
            let m_hat = *mv / corr1;
            let v_hat = *vv / corr2;
            *pv = *pv - alpha * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
