use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

/// Output of [`maxpool2`]: pooled values plus the flat input index each came from.
#[derive(Clone, Debug)]
pub struct Pooled<T> {
    pub output: Tensor4<T>,
    pub argmax: Vec<u32>,
}

/// 2x2 max pooling with stride 2. Ties go to the first position in row-major
/// window order.
pub fn maxpool2<T: Real>(input: &Tensor4<T>) -> Result<Pooled<T>> {
    let s = input.shape();
    if !s.rows.is_multiple_of(2) {
        return Err(Error::shape("maxpool2", "rows (must be even)", s.rows + 1, s.rows));
    }
    if !s.cols.is_multiple_of(2) {
        return Err(Error::shape("maxpool2", "cols (must be even)", s.cols + 1, s.cols));
    }
    let (or, oc) = (s.rows / 2, s.cols / 2);
    let out_shape = Shape4::new(s.batch, s.channels, or, oc);
    let mut out = Tensor4::zeros(out_shape);
    let mut argmax = vec![0u32; out_shape.len()];
    let src = input.data();
    let dst = out.data_mut();
    for plane in 0..s.batch * s.channels {
        let base = plane * s.plane();
        for i in 0..or {
            for j in 0..oc {
                let mut best = base + 2 * i * s.cols + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * s.cols + 2 * j + dj;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = plane * or * oc + i * oc + j;
                dst[o] = src[best];
                argmax[o] = best as u32;
            }
        }
    }
    Ok(Pooled { output: out, argmax })
}

/// Routes each upstream gradient entry to the argmax position it was pooled from.
pub fn maxpool2_backward<T: Real>(input_shape: Shape4, argmax: &[u32], grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if grad_out.shape().len() != argmax.len() {
        return Err(Error::shape(
            "maxpool2_backward",
            "grad_out elements",
            argmax.len(),
            grad_out.shape().len(),
        ));
    }
    let mut grad_in = Tensor4::zeros(input_shape);
    let g = grad_in.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx as usize] += v;
    }
    Ok(grad_in)
}
