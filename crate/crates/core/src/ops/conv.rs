//! 2-D convolution and its stride-2 transpose, lowered to im2col + GEMM.
//!
//! Weights for `conv2d` are `out x in x kh x kw`. Weights for `deconv2` are
//! `in x out x 3 x 3`, i.e. the same tensor a stride-2 `conv2d` from the
//! deconvolution's output space back to its input space would use, so the two
//! are exact adjoints of each other.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::{gemm, MatLayout, Real};
use crate::tensor::{Shape4, Tensor4};

/// Stride and zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad_rows: usize,
    pub pad_cols: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        ConvGeometry {
            stride,
            pad_rows: padding,
            pad_cols: padding,
        }
    }

    /// Stride 1 with the padding that keeps the spatial size for a `kh x kw` kernel.
    pub const fn same(kh: usize, kw: usize) -> Self {
        ConvGeometry {
            stride: 1,
            pad_rows: kh / 2,
            pad_cols: kw / 2,
        }
    }

    pub fn output_size(&self, rows: usize, cols: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let pr = rows + 2 * self.pad_rows;
        let pc = cols + 2 * self.pad_cols;
        if pr < kh || pc < kw || self.stride == 0 {
            return None;
        }
        Some(((pr - kh) / self.stride + 1, (pc - kw) / self.stride + 1))
    }
}

/// Geometry of the convolution whose adjoint `deconv2` computes.
pub const DECONV_GEOMETRY: ConvGeometry = ConvGeometry::new(2, 1);

#[derive(Clone, Copy)]
struct Patch {
    channels: usize,
    rows: usize,
    cols: usize,
    kh: usize,
    kw: usize,
    out_rows: usize,
    out_cols: usize,
    geom: ConvGeometry,
}

impl Patch {
    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_rows * self.out_cols
    }

    /// Source row/col for output position `o` and kernel tap `k` along one axis.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let p = (o * stride + k).checked_sub(pad)?;
        (p < len).then_some(p)
    }
}

/// Unfolds one `channels x rows x cols` image into a `(c*kh*kw) x (out_rows*out_cols)` matrix.
fn im2col<T: Real>(src: &[T], p: &Patch, cols: &mut [T]) {
    let n = p.col_cols();
    let g = p.geom;
    for c in 0..p.channels {
        let plane = &src[c * p.rows * p.cols..(c + 1) * p.rows * p.cols];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (c * p.kh + ki) * p.kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oi in 0..p.out_rows {
                    let line = &mut dst[oi * p.out_cols..(oi + 1) * p.out_cols];
                    match Patch::src(oi, ki, g.stride, g.pad_rows, p.rows) {
                        None => line.fill(T::ZERO),
                        Some(si) if g.stride == 1 => {
                            // contiguous run: output oj reads source column oj + kj - pad
                            let srow = &plane[si * p.cols..(si + 1) * p.cols];
                            let lo = g.pad_cols.saturating_sub(kj).min(p.out_cols);
                            let hi = (p.cols + g.pad_cols).saturating_sub(kj).clamp(lo, p.out_cols);
                            line[..lo].fill(T::ZERO);
                            line[lo..hi].copy_from_slice(&srow[lo + kj - g.pad_cols..hi + kj - g.pad_cols]);
                            line[hi..].fill(T::ZERO);
                        }
                        Some(si) => {
                            let srow = &plane[si * p.cols..(si + 1) * p.cols];
                            for (oj, v) in line.iter_mut().enumerate() {
                                *v = match Patch::src(oj, kj, g.stride, g.pad_cols, p.cols) {
                                    Some(sj) => srow[sj],
                                    None => T::ZERO,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds the column matrix back onto the image.
fn col2im<T: Real>(cols: &[T], p: &Patch, dst: &mut [T]) {
    let n = p.col_cols();
    let g = p.geom;
    for c in 0..p.channels {
        let plane = &mut dst[c * p.rows * p.cols..(c + 1) * p.rows * p.cols];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let row = (c * p.kh + ki) * p.kw + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oi in 0..p.out_rows {
                    let Some(si) = Patch::src(oi, ki, g.stride, g.pad_rows, p.rows) else {
                        continue;
                    };
                    let line = &src[oi * p.out_cols..(oi + 1) * p.out_cols];
                    let drow = &mut plane[si * p.cols..(si + 1) * p.cols];
                    if g.stride == 1 {
                        let lo = g.pad_cols.saturating_sub(kj).min(p.out_cols);
                        let hi = (p.cols + g.pad_cols).saturating_sub(kj).clamp(lo, p.out_cols);
                        let d = &mut drow[lo + kj - g.pad_cols..hi + kj - g.pad_cols];
                        for (a, &v) in d.iter_mut().zip(&line[lo..hi]) {
                            *a += v;
                        }
                        continue;
                    }
                    for (oj, &v) in line.iter().enumerate() {
                        if let Some(sj) = Patch::src(oj, kj, g.stride, g.pad_cols, p.cols) {
                            drow[sj] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_shapes(
    op: &'static str,
    input: Shape4,
    weights: Shape4,
    bias_len: usize,
    geom: ConvGeometry,
) -> Result<Patch> {
    if input.channels != weights.channels {
        return Err(Error::shape(op, "input channels", weights.channels, input.channels));
    }
    if bias_len != weights.batch {
        return Err(Error::shape(op, "bias length", weights.batch, bias_len));
    }
    if weights.rows.is_multiple_of(2) || weights.cols.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "{op}: kernel must have odd size, got {}x{}",
            weights.rows, weights.cols
        )));
    }
    if geom.stride == 0 {
        return Err(Error::Config(format!("{op}: stride must be >= 1")));
    }
    let (out_rows, out_cols) = geom
        .output_size(input.rows, input.cols, weights.rows, weights.cols)
        .ok_or_else(|| Error::shape(op, "rows", weights.rows, input.rows + 2 * geom.pad_rows))?;
    Ok(Patch {
        channels: input.channels,
        rows: input.rows,
        cols: input.cols,
        kh: weights.rows,
        kw: weights.cols,
        out_rows,
        out_cols,
        geom,
    })
}

/// Cross-correlation of `input` (`B x inC x H x W`) with `weights` (`outC x inC x kh x kw`).
pub fn conv2d<T: Real>(input: &Tensor4<T>, weights: &Tensor4<T>, bias: &[T], geom: ConvGeometry) -> Result<Tensor4<T>> {
    let is = input.shape();
    let ws = weights.shape();
    let p = check_conv_shapes("conv2d", is, ws, bias.len(), geom)?;
    let out_c = ws.batch;
    let k = p.col_rows();
    let n = p.col_cols();
    let mut out = Tensor4::zeros(Shape4::new(is.batch, out_c, p.out_rows, p.out_cols));
    let w = weights.data();
    out.data_mut()
        .par_chunks_mut(out_c * n)
        .zip(input.data().par_chunks(is.item()))
        .for_each_init(
            || vec![T::ZERO; k * n],
            |cols, (dst, src)| {
                im2col(src, &p, cols);
                for (c, plane) in dst.chunks_exact_mut(n).enumerate() {
                    plane.fill(bias[c]);
                }
                gemm(
                    T::ONE,
                    w,
                    MatLayout::row_major(out_c, k),
                    cols,
                    MatLayout::row_major(k, n),
                    T::ONE,
                    dst,
                    MatLayout::row_major(out_c, n),
                );
            },
        );
    Ok(out)
}

/// Gradients of a convolution-like op with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

fn sum_ordered<T: Real>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::ZERO; len];
    for part in parts {
        for (a, v) in acc.iter_mut().zip(part) {
            *a += v;
        }
    }
    acc
}

fn plane_sums<T: Real>(grad_out: &Tensor4<T>) -> Vec<T> {
    let s = grad_out.shape();
    let mut bias = vec![T::ZERO; s.channels];
    for b in 0..s.batch {
        for (c, plane) in grad_out.item(b).chunks_exact(s.plane()).enumerate() {
            bias[c] += plane.iter().copied().sum::<T>();
        }
    }
    bias
}

/// Backward pass of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    geom: ConvGeometry,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let is = input.shape();
    let ws = weights.shape();
    let p = check_conv_shapes("conv2d_backward", is, ws, ws.batch, geom)?;
    let gs = grad_out.shape();
    if gs != Shape4::new(is.batch, ws.batch, p.out_rows, p.out_cols) {
        return Err(Error::shape(
            "conv2d_backward",
            "grad_out elements",
            is.batch * ws.batch * p.out_rows * p.out_cols,
            gs.len(),
        ));
    }
    let out_c = ws.batch;
    let k = p.col_rows();
    let n = p.col_cols();
    let w = weights.data();
    let mut grad_in = Tensor4::zeros(is);
    let weight_parts: Vec<Vec<T>> = grad_in
        .data_mut()
        .par_chunks_mut(is.item())
        .zip(input.data().par_chunks(is.item()))
        .zip(grad_out.data().par_chunks(gs.item()))
        .map(|((din, src), dout)| {
            let mut cols = vec![T::ZERO; k * n];
            im2col(src, &p, &mut cols);
            let mut dw = vec![T::ZERO; out_c * k];
            gemm(
                T::ONE,
                dout,
                MatLayout::row_major(out_c, n),
                &cols,
                MatLayout::row_major(k, n).transposed(),
                T::ZERO,
                &mut dw,
                MatLayout::row_major(out_c, k),
            );
            gemm(
                T::ONE,
                w,
                MatLayout::row_major(out_c, k).transposed(),
                dout,
                MatLayout::row_major(out_c, n),
                T::ZERO,
                &mut cols,
                MatLayout::row_major(k, n),
            );
            col2im(&cols, &p, din);
            dw
        })
        .collect();
    Ok(ConvGrads {
        input: grad_in,
        weights: sum_ordered(weight_parts, ws.len()),
        bias: plane_sums(grad_out),
    })
}

fn deconv_patch(op: &'static str, input: Shape4, weights: Shape4, bias_len: usize) -> Result<Patch> {
    if weights.rows != 3 || weights.cols != 3 {
        return Err(Error::Config(format!(
            "{op}: kernel must be 3x3, got {}x{}",
            weights.rows, weights.cols
        )));
    }
    if input.channels != weights.batch {
        return Err(Error::shape(op, "input channels", weights.batch, input.channels));
    }
    if bias_len != weights.channels {
        return Err(Error::shape(op, "bias length", weights.channels, bias_len));
    }
    Ok(Patch {
        channels: weights.channels,
        rows: 2 * input.rows,
        cols: 2 * input.cols,
        kh: 3,
        kw: 3,
        out_rows: input.rows,
        out_cols: input.cols,
        geom: DECONV_GEOMETRY,
    })
}

/// Stride-2 3x3 transposed convolution. Output is exactly twice the input size;
/// it is the adjoint of `conv2d(., weights, 0, stride 2, pad 1)` plus a bias.
pub fn deconv2<T: Real>(input: &Tensor4<T>, weights: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>> {
    let is = input.shape();
    let ws = weights.shape();
    let p = deconv_patch("deconv2", is, ws, bias.len())?;
    let in_c = ws.batch;
    let out_c = ws.channels;
    let k = p.col_rows();
    let n = p.col_cols();
    let w = weights.data();
    let out_shape = Shape4::new(is.batch, out_c, p.rows, p.cols);
    let mut out = Tensor4::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(out_shape.item())
        .zip(input.data().par_chunks(is.item()))
        .for_each_init(
            || vec![T::ZERO; k * n],
            |cols, (dst, src)| {
                gemm(
                    T::ONE,
                    w,
                    MatLayout::row_major(in_c, k).transposed(),
                    src,
                    MatLayout::row_major(in_c, n),
                    T::ZERO,
                    cols,
                    MatLayout::row_major(k, n),
                );
                for (c, plane) in dst.chunks_exact_mut(p.rows * p.cols).enumerate() {
                    plane.fill(bias[c]);
                }
                col2im(cols, &p, dst);
            },
        );
    Ok(out)
}

/// Backward pass of [`deconv2`].
pub fn deconv2_backward<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let is = input.shape();
    let ws = weights.shape();
    let p = deconv_patch("deconv2_backward", is, ws, ws.channels)?;
    let gs = grad_out.shape();
    if gs != Shape4::new(is.batch, ws.channels, p.rows, p.cols) {
        return Err(Error::shape(
            "deconv2_backward",
            "grad_out elements",
            is.batch * ws.channels * p.rows * p.cols,
            gs.len(),
        ));
    }
    let in_c = ws.batch;
    let k = p.col_rows();
    let n = p.col_cols();
    let w = weights.data();
    let mut grad_in = Tensor4::zeros(is);
    let weight_parts: Vec<Vec<T>> = grad_in
        .data_mut()
        .par_chunks_mut(is.item())
        .zip(input.data().par_chunks(is.item()))
        .zip(grad_out.data().par_chunks(gs.item()))
        .map(|((din, src), dout)| {
            let mut cols = vec![T::ZERO; k * n];
            im2col(dout, &p, &mut cols);
            gemm(
                T::ONE,
                w,
                MatLayout::row_major(in_c, k),
                &cols,
                MatLayout::row_major(k, n),
                T::ZERO,
                din,
                MatLayout::row_major(in_c, n),
            );
            let mut dw = vec![T::ZERO; in_c * k];
            gemm(
                T::ONE,
                src,
                MatLayout::row_major(in_c, n),
                &cols,
                MatLayout::row_major(k, n).transposed(),
                T::ZERO,
                &mut dw,
                MatLayout::row_major(in_c, k),
            );
            dw
        })
        .collect();
    Ok(ConvGrads {
        input: grad_in,
        weights: sum_ordered(weight_parts, ws.len()),
        bias: plane_sums(grad_out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;

    /// Six nested loops, straight from the definition.
    fn conv_oracle(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor4<f64> {
        let xs = x.shape();
        let ws = w.shape();
        let or = (xs.rows + 2 * pad - ws.rows) / stride + 1;
        let oc = (xs.cols + 2 * pad - ws.cols) / stride + 1;
        let mut out = Tensor4::zeros(Shape4::new(xs.batch, ws.batch, or, oc));
        for n in 0..xs.batch {
            for o in 0..ws.batch {
                for i in 0..or {
                    for j in 0..oc {
                        let mut acc = b[o];
                        for c in 0..xs.channels {
                            for ki in 0..ws.rows {
                                for kj in 0..ws.cols {
                                    let r = (i * stride + ki) as isize - pad as isize;
                                    let q = (j * stride + kj) as isize - pad as isize;
                                    if r >= 0 && q >= 0 && (r as usize) < xs.rows && (q as usize) < xs.cols {
                                        acc += x.get(n, c, r as usize, q as usize) * w.get(o, c, ki, kj);
                                    }
                                }
                            }
                        }
                        out.set(n, o, i, j, acc);
                    }
                }
            }
        }
        out
    }

    /// Scatter-accumulate transposed convolution with the top/left crop.
    fn deconv_oracle(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64]) -> Tensor4<f64> {
        let xs = x.shape();
        let ws = w.shape();
        let (or, oc) = (2 * xs.rows, 2 * xs.cols);
        let mut out = Tensor4::from_fn(Shape4::new(xs.batch, ws.channels, or, oc), |[_, c, _, _]| b[c]);
        for n in 0..xs.batch {
            for ci in 0..ws.batch {
                for i in 0..xs.rows {
                    for j in 0..xs.cols {
                        for co in 0..ws.channels {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    let r = (2 * i + ki) as isize - 1;
                                    let q = (2 * j + kj) as isize - 1;
                                    if r >= 0 && q >= 0 && (r as usize) < or && (q as usize) < oc {
                                        let v = out.get(n, co, r as usize, q as usize)
                                            + x.get(n, ci, i, j) * w.get(ci, co, ki, kj);
                                        out.set(n, co, r as usize, q as usize, v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn max_abs_diff(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = random_tensor::<f32>(Shape4::new(1, 1, 5, 5), 1);
        let w = Tensor4::filled(Shape4::new(1, 1, 1, 1), 1.0f32);
        let y = conv2d(&x, &w, &[0.0], ConvGeometry::new(1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_zero_output_and_weight_grad() {
        let x = Tensor4::<f64>::zeros(Shape4::new(2, 3, 8, 8));
        let w = random_tensor::<f64>(Shape4::new(4, 3, 3, 3), 2);
        let y = conv2d(&x, &w, &[0.0; 4], ConvGeometry::same(3, 3)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let up = Tensor4::filled(y.shape(), 1.0);
        let g = conv2d_backward(&x, &w, ConvGeometry::same(3, 3), &up).unwrap();
        assert!(g.weights.iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == (2 * 8 * 8) as f64));
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        for seed in 0..5 {
            let x = random_tensor::<f64>(Shape4::new(2, 3, 7, 7), 10 + seed);
            let w = random_tensor::<f64>(Shape4::new(4, 3, 3, 3), 20 + seed);
            let b = [0.1, -0.2, 0.3, 0.05];
            let y = conv2d(&x, &w, &b, ConvGeometry::new(1, 1)).unwrap();
            assert_eq!(y.shape(), Shape4::new(2, 4, 7, 7));
            assert!(max_abs_diff(&y, &conv_oracle(&x, &w, &b, 1, 1)) < 1e-6);
            let y2 = conv2d(&x, &w, &b, ConvGeometry::new(2, 1)).unwrap();
            assert_eq!(y2.shape(), Shape4::new(2, 4, 4, 4));
            assert!(max_abs_diff(&y2, &conv_oracle(&x, &w, &b, 2, 1)) < 1e-6);
        }
    }

    #[test]
    fn conv_output_size_formula() {
        let x = random_tensor::<f32>(Shape4::new(1, 2, 9, 6), 3);
        let w = random_tensor::<f32>(Shape4::new(3, 2, 3, 5), 4);
        let y = conv2d(&x, &w, &[0.0; 3], ConvGeometry::new(2, 0)).unwrap();
        assert_eq!((y.shape().rows, y.shape().cols), ((9 - 3) / 2 + 1, 1));
    }

    #[test]
    fn conv_reports_offending_axis() {
        let x = random_tensor::<f32>(Shape4::new(1, 2, 5, 5), 3);
        let w = random_tensor::<f32>(Shape4::new(3, 4, 3, 3), 4);
        let err = conv2d(&x, &w, &[0.0; 3], ConvGeometry::same(3, 3)).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let w = random_tensor::<f32>(Shape4::new(3, 2, 2, 2), 4);
        assert!(matches!(
            conv2d(&x, &w, &[0.0; 3], ConvGeometry::same(3, 3)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn deconv_doubles_size() {
        let x = random_tensor::<f32>(Shape4::new(1, 1, 2, 2), 5);
        let w = random_tensor::<f32>(Shape4::new(1, 1, 3, 3), 6);
        let y = deconv2(&x, &w, &[0.0]).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 4, 4));
    }

    #[test]
    fn deconv_rejects_non_3x3() {
        let x = random_tensor::<f32>(Shape4::new(1, 1, 2, 2), 5);
        let w = random_tensor::<f32>(Shape4::new(1, 1, 5, 5), 6);
        assert!(matches!(deconv2(&x, &w, &[0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn deconv_is_adjoint_of_strided_conv() {
        for seed in 0..10 {
            let x = random_tensor::<f64>(Shape4::new(1, 2, 4, 4), 100 + seed);
            let y = random_tensor::<f64>(Shape4::new(1, 3, 2, 2), 200 + seed);
            let w = random_tensor::<f64>(Shape4::new(3, 2, 3, 3), 300 + seed);
            let cx = conv2d(&x, &w, &[0.0; 3], DECONV_GEOMETRY).unwrap();
            let dy = deconv2(&y, &w, &[0.0; 2]).unwrap();
            assert!((cx.dot(&y) - x.dot(&dy)).abs() < 1e-10);
        }
    }

    #[test]
    fn deconv_matches_scatter_oracle() {
        let x = random_tensor::<f64>(Shape4::new(2, 3, 3, 5), 7);
        let w = random_tensor::<f64>(Shape4::new(3, 4, 3, 3), 8);
        let b = [0.5, -0.5, 0.25, 0.0];
        let y = deconv2(&x, &w, &b).unwrap();
        assert!(max_abs_diff(&y, &deconv_oracle(&x, &w, &b)) < 1e-12);
    }
}
