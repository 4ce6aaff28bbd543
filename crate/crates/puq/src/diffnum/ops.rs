//! Forward and backward kernels for the tape ops.
//!
//! Convolutions are lowered to im2col + GEMM; the GEMMs go through `ndarray`
//! (matrixmultiply). Batch items are independent and processed in parallel
//! with deterministic output placement.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::real::Real;
use super::tensor::{shape_err, DiffError, Tensor};

const KSIZE: usize = 3;
const KTAPS: usize = KSIZE * KSIZE;

pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
}

pub(crate) fn conv_dims<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<ConvDims, DiffError> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 {
        return Err(shape_err("conv2d input", "[B, Cin, H, W]", xs));
    }
    if ws.len() != 4 || ws[2] != KSIZE || ws[3] != KSIZE {
        return Err(shape_err("conv2d weight", "[Cout, Cin, 3, 3]", ws));
    }
    if ws[1] != xs[1] {
        return Err(shape_err("conv2d channels", format!("Cin {}", ws[1]), format!("Cin {}", xs[1])));
    }
    if bias.shape() != [ws[0]] {
        return Err(shape_err("conv2d bias", [ws[0]], bias.shape()));
    }
    Ok(ConvDims {
        batch: xs[0],
        cin: xs[1],
        cout: ws[0],
        h: xs[2],
        w: xs[3],
    })
}

/// Zero-padded ("same") 3x3 im2col: output is [Cin*9, H*W].
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(col.len(), cin * KTAPS * hw);
    col.fill(T::zero());
    for ci in 0..cin {
        let chan = &x[ci * hw..(ci + 1) * hw];
        for dy in 0..KSIZE {
            for dx in 0..KSIZE {
                let k = ci * KTAPS + dy * KSIZE + dx;
                let row = &mut col[k * hw..(k + 1) * hw];
                // x0..x1 is the output-column range with an in-bounds source.
                let x0 = 1usize.saturating_sub(dx);
                let x1 = (w + 1 - dx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let yy = y + dy;
                    if yy < 1 || yy > h {
                        continue;
                    }
                    let src = (yy - 1) * w;
                    row[y * w + x0..y * w + x1]
                        .copy_from_slice(&chan[src + x0 + dx - 1..src + x1 + dx - 1]);
                }
            }
        }
    }
}

/// Transpose of `im2col`: scatter-add [Cin*9, H*W] back onto the image grid.
fn col2im_add<T: Real>(col: &[T], cin: usize, h: usize, w: usize, x: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let chan = &mut x[ci * hw..(ci + 1) * hw];
        for dy in 0..KSIZE {
            for dx in 0..KSIZE {
                let k = ci * KTAPS + dy * KSIZE + dx;
                let row = &col[k * hw..(k + 1) * hw];
                let x0 = 1usize.saturating_sub(dx);
                let x1 = (w + 1 - dx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let yy = y + dy;
                    if yy < 1 || yy > h {
                        continue;
                    }
                    let dst = (yy - 1) * w;
                    let src_row = &row[y * w + x0..y * w + x1];
                    let dst_row = &mut chan[dst + x0 + dx - 1..dst + x1 + dx - 1];
                    for (d, s) in dst_row.iter_mut().zip(src_row) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}

fn matmul<T: Real>(a: &[T], ar: usize, ac: usize, b: &[T], br: usize, bc: usize) -> Array2<T> {
    debug_assert_eq!(ac, br);
    let av = ArrayView2::from_shape((ar, ac), a).expect("matmul lhs shape");
    let bv = ArrayView2::from_shape((br, bc), b).expect("matmul rhs shape");
    av.dot(&bv)
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, DiffError> {
    let d = conv_dims(x, weight, bias)?;
    let hw = d.h * d.w;
    let k = d.cin * KTAPS;
    let mut out = Tensor::zeros(&[d.batch, d.cout, d.h, d.w]);
    let xs = x.data();
    let ws = weight.data();
    let bs = bias.data();
    out.data_mut()
        .par_chunks_mut(d.cout * hw)
        .enumerate()
        .for_each(|(b, out_b)| {
            let mut col = vec![T::zero(); k * hw];
            im2col(&xs[b * d.cin * hw..(b + 1) * d.cin * hw], d.cin, d.h, d.w, &mut col);
            let prod = matmul(ws, d.cout, k, &col, k, hw);
            for co in 0..d.cout {
                let bias_v = bs[co];
                let row = prod.row(co);
                let dst = &mut out_b[co * hw..(co + 1) * hw];
                for (o, &p) in dst.iter_mut().zip(row.iter()) {
                    *o = p + bias_v;
                }
            }
        });
    Ok(out)
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = ConvDims {
        batch: x.shape()[0],
        cin: x.shape()[1],
        cout: weight.shape()[0],
        h: x.shape()[2],
        w: x.shape()[3],
    };
    let hw = d.h * d.w;
    let k = d.cin * KTAPS;
    let xs = x.data();
    let ws = weight.data();
    let gs = gout.data();

    let mut dx = Tensor::zeros(&[d.batch, d.cin, d.h, d.w]);
    // Per-item partials, then a fixed-order reduction for dW/db.
    let partials: Vec<(Array2<T>, Vec<T>)> = (0..d.batch)
        .into_par_iter()
        .zip(dx.data_mut().par_chunks_mut(d.cin * hw))
        .map(|(b, dx_b)| {
            let g_b = &gs[b * d.cout * hw..(b + 1) * d.cout * hw];
            let mut col = vec![T::zero(); k * hw];
            im2col(&xs[b * d.cin * hw..(b + 1) * d.cin * hw], d.cin, d.h, d.w, &mut col);
            // dW_b = g_b [Cout, HW] x col^T [HW, K]
            let gv = ArrayView2::from_shape((d.cout, hw), g_b).expect("gout shape");
            let cv = ArrayView2::from_shape((k, hw), &col[..]).expect("col shape");
            let dw_b = gv.dot(&cv.t());
            // dcol = W^T [K, Cout] x g_b [Cout, HW]
            let wv = ArrayView2::from_shape((d.cout, k), ws).expect("weight shape");
            let dcol = wv.t().dot(&gv);
            let dcol_slice = dcol.as_standard_layout();
            col2im_add(dcol_slice.as_slice().expect("dcol layout"), d.cin, d.h, d.w, dx_b);
            let mut db_b = vec![T::zero(); d.cout];
            for co in 0..d.cout {
                let mut acc = T::zero();
                for &g in &g_b[co * hw..(co + 1) * hw] {
                    acc = acc + g;
                }
                db_b[co] = acc;
            }
            (dw_b, db_b)
        })
        .collect();

    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[d.cout]);
    for (dw_b, db_b) in partials {
        let flat = dw_b.as_standard_layout();
        for (a, &p) in dw.data_mut().iter_mut().zip(flat.as_slice().expect("dw layout")) {
            *a = *a + p;
        }
        for (a, p) in db.data_mut().iter_mut().zip(db_b) {
            *a = *a + p;
        }
    }
    (dx, dw, db)
}

pub(crate) fn linear_dims<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize), DiffError> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 2 {
        return Err(shape_err("linear input", "[B, Din]", xs));
    }
    if ws.len() != 2 || ws[1] != xs[1] {
        return Err(shape_err("linear weight", format!("[Dout, {}]", xs[1]), ws));
    }
    if bias.shape() != [ws[0]] {
        return Err(shape_err("linear bias", [ws[0]], bias.shape()));
    }
    Ok((xs[0], xs[1], ws[0]))
}

pub(crate) fn linear_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, DiffError> {
    let (b, din, dout) = linear_dims(x, weight, bias)?;
    let xv = ArrayView2::from_shape((b, din), x.data()).expect("x shape");
    let wv = ArrayView2::from_shape((dout, din), weight.data()).expect("w shape");
    let mut prod = xv.dot(&wv.t());
    for mut row in prod.rows_mut() {
        for (o, &bv) in row.iter_mut().zip(bias.data()) {
            *o = *o + bv;
        }
    }
    let flat = prod.as_standard_layout();
    Tensor::from_vec(&[b, dout], flat.as_slice().expect("prod layout").to_vec())
}

pub(crate) fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (b, din) = (x.shape()[0], x.shape()[1]);
    let dout = weight.shape()[0];
    let xv = ArrayView2::from_shape((b, din), x.data()).expect("x shape");
    let wv = ArrayView2::from_shape((dout, din), weight.data()).expect("w shape");
    let gv = ArrayView2::from_shape((b, dout), gout.data()).expect("gout shape");
    let dx = gv.dot(&wv);
    let dw = gv.t().dot(&xv);
    let mut db = Tensor::zeros(&[dout]);
    for row in gv.rows() {
        for (a, &g) in db.data_mut().iter_mut().zip(row.iter()) {
            *a = *a + g;
        }
    }
    let dx_l = dx.as_standard_layout();
    let dw_l = dw.as_standard_layout();
    (
        Tensor::from_vec(&[b, din], dx_l.as_slice().expect("dx layout").to_vec()).expect("dx"),
        Tensor::from_vec(&[dout, din], dw_l.as_slice().expect("dw layout").to_vec()).expect("dw"),
        db,
    )
}

pub(crate) fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU pullback; the subgradient at 0 is 0, so gating on `out > 0` is exact.
pub(crate) fn relu_backward<T: Real>(out: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let mut g = gout.clone();
    for (gv, &ov) in g.data_mut().iter_mut().zip(out.data()) {
        if ov <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        // center tap 1, else 0
        let x = Tensor::from_fn(&[1, 2, 5, 5], || rand_val());
        let mut wdata = vec![0.0f64; 2 * 2 * 9];
        for co in 0..2 {
            for ci in 0..2 {
                if co == ci {
                    wdata[(co * 2 + ci) * 9 + 4] = 1.0;
                }
            }
        }
        let w = Tensor::from_vec(&[2, 2, 3, 3], wdata).unwrap();
        let b = Tensor::zeros(&[2]);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn conv_constant_input_all_ones_kernel_interior() {
        let x = Tensor::full(&[1, 1, 6, 6], 5.0f64);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0f64);
        let b = Tensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        // interior pixel sums all nine taps of the constant-5 input
        assert_relative_eq!(y.data()[1 * 6 + 1], 45.0, max_relative = 1e-12);
        assert_relative_eq!(y.data()[3 * 6 + 2], 45.0, max_relative = 1e-12);
        // corner only sees four in-bounds taps under zero padding
        assert_relative_eq!(y.data()[0], 20.0, max_relative = 1e-12);
    }

    #[test]
    fn conv_zero_weight_returns_bias() {
        let x = Tensor::from_fn(&[2, 3, 4, 4], || rand_val());
        let w = Tensor::zeros(&[2, 3, 3, 3]);
        let b = Tensor::from_vec(&[2], vec![2.5, -1.0]).unwrap();
        let y = conv2d_forward(&x, &w, &b).unwrap();
        for bi in 0..2 {
            for co in 0..2 {
                let expect = if co == 0 { 2.5 } else { -1.0 };
                for &v in &y.data()[(bi * 2 + co) * 16..(bi * 2 + co + 1) * 16] {
                    assert_eq!(v, expect);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(&[2, 4, 3, 3]);
        let b = Tensor::<f64>::zeros(&[2]);
        assert!(matches!(
            conv2d_forward(&x, &w, &b),
            Err(DiffError::Shape { .. })
        ));
    }

    #[test]
    fn linear_hand_example() {
        // input [1, 2], weight [[3, 4]], bias [1] -> 1*3 + 2*4 + 1 = 12
        let x = Tensor::from_vec(&[1, 2], vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let y = linear_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[12.0]);
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let x = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut eye = vec![0.0f64; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::from_vec(&[3, 3], eye).unwrap();
        let b = Tensor::zeros(&[3]);
        assert_eq!(linear_forward(&x, &w, &b).unwrap().data(), x.data());

        let zero = Tensor::zeros(&[2, 3]);
        let b2 = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let w2 = Tensor::from_fn(&[3, 3], || rand_val());
        let y = linear_forward(&zero, &w2, &b2).unwrap();
        assert_eq!(y.data(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
    }

    #[test]
    fn relu_sign_cases() {
        let x = Tensor::from_vec(&[3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let all_neg = Tensor::from_vec(&[4], vec![-3.0f64, -0.1, -7.0, -2.0]).unwrap();
        assert!(relu_forward(&all_neg).data().iter().all(|&v| v == 0.0));
    }

    fn rand_val() -> f64 {
        use crate::diffnum::rng::RngStream;
        use std::cell::RefCell;
        thread_local! {
            static RNG: RefCell<RngStream> = RefCell::new(RngStream::new(42, "ops-test", 0));
        }
        RNG.with(|r| r.borrow_mut().range(-1.0, 1.0))
    }
}
