//! Central finite-difference gradient oracle.
//!
//! Verifies reverse-mode gradients against an independent numerical estimate:
//! the loss is re-evaluated at `x ± h` per probed coordinate and compared to
//! the tape gradient. The graph builder must be deterministic (any dropout
//! stream has to be re-created with fixed keys inside the closure), otherwise
//! the two evaluations sample different functions.

use super::rng::RngStream;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Default step for f64 checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Result of one gradient check: the worst probed coordinate.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: usize,
}

/// Compare tape gradients of `build` against central finite differences.
///
/// `build` receives leaf nodes for `inputs` (all tracked) and must return a
/// scalar loss node. `probes_per_input` coordinates per input are probed
/// (all of them when the input is at most that size).
pub fn central_diff_check<F>(
    inputs: &[Tensor<f64>],
    build: F,
    h: f64,
    probes_per_input: usize,
    rng: &mut RngStream,
) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
{
    let eval = |xs: &[Tensor<f64>]| -> (Vec<Vec<f64>>, f64) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let loss = build(&mut tape, &ids);
        let value = tape.value(loss).item();
        tape.backward(loss).expect("backward");
        let grads = ids
            .iter()
            .map(|&id| tape.grad_tensor(id).into_data())
            .collect();
        (grads, value)
    };

    let (analytic, _) = eval(inputs);

    let mut max_rel = 0.0f64;
    let mut probes = 0usize;
    let mut xs: Vec<Tensor<f64>> = inputs.to_vec();
    for (j, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = if n <= probes_per_input {
            (0..n).collect()
        } else {
            (0..probes_per_input).map(|_| rng.below(n)).collect()
        };
        for k in coords {
            let orig = xs[j].data()[k];
            xs[j].data_mut()[k] = orig + h;
            let lp = eval_loss(&xs, &build);
            xs[j].data_mut()[k] = orig - h;
            let lm = eval_loss(&xs, &build);
            xs[j].data_mut()[k] = orig;

            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[j][k];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            let rel = (a - fd).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
            probes += 1;
        }
    }
    GradCheckReport {
        max_rel_err: max_rel,
        probes,
    }
}

fn eval_loss<F>(xs: &[Tensor<f64>], build: &F) -> f64
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let loss = build(&mut tape, &ids);
    tape.value(loss).item()
}
