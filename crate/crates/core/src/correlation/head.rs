//! Learned correlation head: a hidden layer of `2*theta` units and a single
//! output unit, both 1x3 kernels sliding along the disparity axis of the
//! paired feature space.
//!
//! Two evaluation routes produce the same scores up to rounding:
//! * [`learned_scores`] materializes the paired space and convolves it.
//! * [`learned_scores_factored`] splits every hidden kernel tap into its left
//!   and right halves. The left half only depends on the left pixel and the
//!   right half only on the right pixel, so each is computed once per pixel
//!   instead of once per (pixel, disparity) pair.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::psi::PsiVolume;
use super::volume::{CostVolume, Pairing};
use crate::error::{Error, Result};
use crate::real::{gemm, MatLayout, Real};
use crate::siamese::{FeatureView, InitConfig};
use crate::tensor::{Shape4, Tensor4};

/// Disparities past the last scored one that the stacked 1x3 kernels reach.
/// Scoring `0..=D` from a paired space built to `D + HEAD_CONTEXT` makes every
/// score independent of `D`.
pub const HEAD_CONTEXT: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct CorrHead<T> {
    pub theta: usize,
    /// `2theta x 2theta x 1 x 3`
    pub hidden_weight: Tensor4<T>,
    pub hidden_bias: Tensor4<T>,
    /// `1 x 2theta x 1 x 3`
    pub output_weight: Tensor4<T>,
    pub output_bias: Tensor4<T>,
}

/// Gradients of every head parameter, flat in the parameter layouts.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads<T> {
    pub hidden_weight: Vec<T>,
    pub hidden_bias: Vec<T>,
    pub output_weight: Vec<T>,
    pub output_bias: Vec<T>,
}

/// Post-relu hidden activations, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct HeadActivations<T> {
    rows: usize,
    cols: usize,
    max_disp: usize,
    hidden: Vec<T>,
}

impl<T: Real> CorrHead<T> {
    pub fn new(theta: usize, init: InitConfig, rng: &mut impl Rng) -> Result<Self> {
        let w = 2 * theta;
        let hidden_std = init.std.unwrap_or_else(|| (2.0 / (w * 3) as f64).sqrt());
        let output_std = init.std.unwrap_or_else(|| (2.0 / (w * 3) as f64).sqrt());
        let hn = Normal::new(0.0, hidden_std).map_err(|e| Error::Config(format!("init std: {e}")))?;
        let on = Normal::new(0.0, output_std).map_err(|e| Error::Config(format!("init std: {e}")))?;
        Ok(CorrHead {
            theta,
            hidden_weight: Tensor4::from_fn(Shape4::new(w, w, 1, 3), |_| T::from_f64(hn.sample(rng))),
            hidden_bias: Tensor4::zeros(Shape4::new(1, w, 1, 1)),
            output_weight: Tensor4::from_fn(Shape4::new(1, w, 1, 3), |_| T::from_f64(on.sample(rng))),
            output_bias: Tensor4::zeros(Shape4::new(1, 1, 1, 1)),
        })
    }

    /// `(2theta * 3 * 2theta + 2theta) + (2theta * 3 + 1)`, whatever the disparity range.
    pub fn param_count(theta: usize) -> usize {
        let w = 2 * theta;
        (w * 3 * w + w) + (w * 3 + 1)
    }

    pub fn params(&self) -> Vec<(String, &Tensor4<T>)> {
        vec![
            ("head.hidden.weight".into(), &self.hidden_weight),
            ("head.hidden.bias".into(), &self.hidden_bias),
            ("head.output.weight".into(), &self.output_weight),
            ("head.output.bias".into(), &self.output_bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        vec![
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.output_weight,
            &mut self.output_bias,
        ]
    }

    pub fn accumulate(&mut self, g: &HeadGrads<T>) {
        for (p, src) in
            self.params_mut()
                .into_iter()
                .zip([&g.hidden_weight, &g.hidden_bias, &g.output_weight, &g.output_bias])
        {
            for (a, &v) in p.grad_mut().iter_mut().zip(src) {
                *a += v;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> CorrHead<U> {
        CorrHead {
            theta: self.theta,
            hidden_weight: self.hidden_weight.cast(),
            hidden_bias: self.hidden_bias.cast(),
            output_weight: self.output_weight.cast(),
            output_bias: self.output_bias.cast(),
        }
    }

    fn width(&self) -> usize {
        2 * self.theta
    }

    /// Tap `k` of the hidden kernel restricted to input channels
    /// `[first, first + count)`, as a `count x 2theta` matrix (input x output).
    fn hidden_tap(&self, k: usize, first: usize, count: usize) -> MatLayout {
        let w = self.width();
        MatLayout {
            rows: count,
            cols: w,
            row_stride: 3,
            col_stride: 3 * w,
            offset: first * 3 + k,
        }
    }

    fn zero_grads(&self) -> HeadGrads<T> {
        let w = self.width();
        HeadGrads {
            hidden_weight: vec![T::ZERO; w * w * 3],
            hidden_bias: vec![T::ZERO; w],
            output_weight: vec![T::ZERO; w * 3],
            output_bias: vec![T::ZERO; 1],
        }
    }
}

#[inline]
fn add_assign<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], alpha: T, src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += alpha * b;
    }
}

/// Dot product with eight independent accumulators so it vectorizes.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::ZERO; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn zero_padding_rows<T: Real>(buf: &mut [T], pixels: usize, max_disp: usize, w: usize) {
    let block = (max_disp + 3) * w;
    for p in 0..pixels {
        buf[p * block..p * block + w].fill(T::ZERO);
        buf[(p + 1) * block - w..(p + 1) * block].fill(T::ZERO);
    }
}

/// Output kernel as three contiguous tap vectors.
fn output_taps<T: Real>(head: &CorrHead<T>) -> Vec<T> {
    let w = head.width();
    let w2 = head.output_weight.data();
    let mut t = vec![T::ZERO; 3 * w];
    for o in 0..w {
        for k in 0..3 {
            t[k * w + o] = w2[o * 3 + k];
        }
    }
    t
}

/// Hidden bias and relu on the accumulated pre-activations (padding rows
/// are cleared), followed by the 1x3 output unit.
fn finish<T: Real>(
    head: &CorrHead<T>,
    mut hidden: Vec<T>,
    rows: usize,
    cols: usize,
    max_disp: usize,
) -> (CostVolume<T>, HeadActivations<T>) {
    let w = head.width();
    let pixels = rows * cols;
    let nd = max_disp + 1;
    let block = (max_disp + 3) * w;
    zero_padding_rows(&mut hidden, pixels, max_disp, w);
    let b1 = head.hidden_bias.data();
    let b2 = head.output_bias.data()[0];
    let w2 = output_taps(head);
    let mut scores = vec![T::ZERO; pixels * nd];
    let mut taps = vec![T::ZERO; (nd + 2) * 3];
    for (p, hb) in hidden.chunks_exact_mut(block).enumerate() {
        for r in 1..=nd {
            let h = &mut hb[r * w..(r + 1) * w];
            for (v, &b) in h.iter_mut().zip(b1) {
                let x = *v + b;
                *v = if x > T::ZERO { x } else { T::ZERO };
            }
            for k in 0..3 {
                taps[r * 3 + k] = dot(h, &w2[k * w..(k + 1) * w]);
            }
        }
        for d in 0..nd {
            // disparity d lives in block row d + 1; rows 0 and nd + 1 are zero padding
            let left = if d > 0 { taps[d * 3] } else { T::ZERO };
            let right = if d + 2 <= nd { taps[(d + 2) * 3 + 2] } else { T::ZERO };
            scores[p * nd + d] = b2 + left + taps[(d + 1) * 3 + 1] + right;
        }
    }
    (
        CostVolume {
            rows,
            cols,
            max_disp,
            scores,
        },
        HeadActivations {
            rows,
            cols,
            max_disp,
            hidden,
        },
    )
}

/// Backward through the output unit, relu and hidden bias. Returns the
/// gradient w.r.t. the hidden pre-activations (zero on padding rows) and
/// fills the output-unit and hidden-bias gradients.
fn finish_backward<T: Real>(
    head: &CorrHead<T>,
    act: &HeadActivations<T>,
    dscores: &[T],
    grads: &mut HeadGrads<T>,
) -> Vec<T> {
    let w = head.width();
    let pixels = act.rows * act.cols;
    let nd = act.max_disp + 1;
    let block = (act.max_disp + 3) * w;
    assert_eq!(dscores.len(), pixels * nd, "score gradient length");
    let w2 = output_taps(head);
    let mut dw2 = vec![T::ZERO; 3 * w];
    let mut dh = vec![T::ZERO; act.hidden.len()];
    let mut dtaps = vec![T::ZERO; (nd + 2) * 3];
    for (p, (hb, db)) in act
        .hidden
        .chunks_exact(block)
        .zip(dh.chunks_exact_mut(block))
        .enumerate()
    {
        dtaps.fill(T::ZERO);
        for d in 0..nd {
            let g = dscores[p * nd + d];
            grads.output_bias[0] += g;
            dtaps[d * 3] += g;
            dtaps[(d + 1) * 3 + 1] += g;
            dtaps[(d + 2) * 3 + 2] += g;
        }
        for r in 1..=nd {
            let h = &hb[r * w..(r + 1) * w];
            let dr = &mut db[r * w..(r + 1) * w];
            for k in 0..3 {
                let g = dtaps[r * 3 + k];
                axpy(&mut dw2[k * w..(k + 1) * w], g, h);
                axpy(dr, g, &w2[k * w..(k + 1) * w]);
            }
            for (g, &hv) in dr.iter_mut().zip(h) {
                if hv <= T::ZERO {
                    *g = T::ZERO;
                }
            }
            add_assign(&mut grads.hidden_bias, dr);
        }
    }
    for o in 0..w {
        for k in 0..3 {
            grads.output_weight[o * 3 + k] += dw2[k * w + o];
        }
    }
    dh
}

fn check_head<T: Real>(head: &CorrHead<T>, theta: usize) -> Result<()> {
    if head.theta != theta {
        return Err(Error::shape("learned_scores", "channels", 2 * head.theta, 2 * theta));
    }
    Ok(())
}

/// Scores a paired feature space with the head.
pub fn learned_scores<T: Real>(psi: &PsiVolume<T>, head: &CorrHead<T>) -> Result<CostVolume<T>> {
    learned_scores_forward(psi, head).map(|(v, _)| v)
}

pub fn learned_scores_forward<T: Real>(
    psi: &PsiVolume<T>,
    head: &CorrHead<T>,
) -> Result<(CostVolume<T>, HeadActivations<T>)> {
    check_head(head, psi.theta)?;
    let w = head.width();
    let m = psi.padded_rows();
    let mut hidden = vec![T::ZERO; m * w];
    // Output row r reads paired rows r-1, r, r+1; row r = 1..m-1 covers every valid row.
    let inner = MatLayout {
        rows: m - 2,
        cols: w,
        row_stride: w,
        col_stride: 1,
        offset: 0,
    };
    for k in 0..3 {
        gemm(
            T::ONE,
            &psi.data,
            inner.at(k * w),
            head.hidden_weight.data(),
            head.hidden_tap(k, 0, w),
            T::ONE,
            &mut hidden,
            inner.at(w),
        );
    }
    Ok(finish(head, hidden, psi.rows, psi.cols, psi.max_disp))
}

/// Backward of [`learned_scores_forward`]: gradient w.r.t. the paired space and the head.
pub fn learned_scores_backward<T: Real>(
    psi: &PsiVolume<T>,
    head: &CorrHead<T>,
    act: &HeadActivations<T>,
    dscores: &[T],
) -> Result<(PsiVolume<T>, HeadGrads<T>)> {
    check_head(head, psi.theta)?;
    let w = head.width();
    let m = psi.padded_rows();
    let mut grads = head.zero_grads();
    let dh = finish_backward(head, act, dscores, &mut grads);
    let inner = MatLayout {
        rows: m - 2,
        cols: w,
        row_stride: w,
        col_stride: 1,
        offset: 0,
    };
    let mut dpsi = PsiVolume::zeros(psi.rows, psi.cols, psi.max_disp, psi.theta);
    for k in 0..3 {
        gemm(
            T::ONE,
            &psi.data,
            inner.at(k * w).transposed(),
            &dh,
            inner.at(w),
            T::ONE,
            &mut grads.hidden_weight,
            head.hidden_tap(k, 0, w),
        );
        gemm(
            T::ONE,
            &dh,
            inner.at(w),
            head.hidden_weight.data(),
            head.hidden_tap(k, 0, w).transposed(),
            T::ONE,
            &mut dpsi.data,
            inner.at(k * w),
        );
    }
    zero_padding_rows(&mut dpsi.data, psi.pixels(), psi.max_disp, w);
    Ok((dpsi, grads))
}

/// Channel-major feature rows `rows` as a `pixels x theta` matrix.
fn pixel_rows<T: Real>(f: &FeatureView<'_, T>, rows: &Range<usize>) -> MatLayout {
    MatLayout {
        rows: rows.len() * f.cols,
        cols: f.theta,
        row_stride: 1,
        col_stride: f.plane(),
        offset: rows.start * f.cols,
    }
}

/// Per-pixel, per-tap projections of one feature map through one half of the
/// hidden kernel: `[pixel][tap][2theta]`.
fn project<T: Real>(head: &CorrHead<T>, f: &FeatureView<'_, T>, rows: &Range<usize>, first: usize) -> Vec<T> {
    let w = head.width();
    let src = pixel_rows(f, rows);
    let mut out = vec![T::ZERO; src.rows * 3 * w];
    for k in 0..3 {
        gemm(
            T::ONE,
            f.data,
            src,
            head.hidden_weight.data(),
            head.hidden_tap(k, first, head.theta),
            T::ZERO,
            &mut out,
            MatLayout {
                rows: src.rows,
                cols: w,
                row_stride: 3 * w,
                col_stride: 1,
                offset: k * w,
            },
        );
    }
    out
}

/// Per-tap projections of both images plus what is needed to walk the
/// hidden layer one left pixel at a time.
struct Factored<'a, T> {
    head: &'a CorrHead<T>,
    pairing: Pairing,
    cols: usize,
    right_cols: usize,
    a: Vec<T>,
    u: Vec<T>,
}

impl<T: Real> Factored<'_, T> {
    /// Hidden activations of left pixel `(ii, j)` for every disparity,
    /// `[disparity][2theta]`, written into `h`.
    fn hidden(&self, ii: usize, j: usize, h: &mut [T]) {
        let w = self.head.width();
        let dmax = self.pairing.max_disp;
        let p = ii * self.cols + j;
        let b1 = self.head.hidden_bias.data();
        for d in 0..=dmax {
            let row = &mut h[d * w..(d + 1) * w];
            row.fill(T::ZERO);
            self.for_taps(ii, j, d, |k, q| {
                add_assign(row, &self.a[(p * 3 + k) * w..(p * 3 + k + 1) * w]);
                if let Some(q) = q {
                    add_assign(row, &self.u[(q * 3 + k) * w..(q * 3 + k + 1) * w]);
                }
            });
            for (v, &b) in row.iter_mut().zip(b1) {
                let x = *v + b;
                *v = if x > T::ZERO { x } else { T::ZERO };
            }
        }
    }

    /// Calls `f(tap, right pixel)` for every kernel tap of hidden unit row
    /// `d` that lands inside the disparity range; the right pixel is `None`
    /// when the paired right column falls outside the image.
    #[inline]
    fn for_taps(&self, ii: usize, j: usize, d: usize, mut f: impl FnMut(usize, Option<usize>)) {
        for k in 0..3 {
            let Some(e) = (d + k).checked_sub(1) else { continue };
            if e > self.pairing.max_disp {
                continue;
            }
            let q = self
                .pairing
                .right_col(j, e, self.right_cols)
                .map(|rc| ii * self.right_cols + rc);
            f(k, q);
        }
    }
}

fn factored<'a, T: Real>(
    left: &FeatureView<'_, T>,
    right: &FeatureView<'_, T>,
    pairing: Pairing,
    rows: &Range<usize>,
    head: &'a CorrHead<T>,
) -> Result<Factored<'a, T>> {
    pairing.check(left, right)?;
    check_head(head, left.theta)?;
    if rows.end > left.rows {
        return Err(Error::shape("learned_scores", "rows", left.rows, rows.end));
    }
    Ok(Factored {
        head,
        pairing,
        cols: left.cols,
        right_cols: right.cols,
        a: project(head, left, rows, 0),
        u: project(head, right, rows, head.theta),
    })
}

/// Head scores for rows `rows` of the left image, without materializing the
/// paired space or the hidden layer of more than one pixel at a time.
pub fn learned_scores_factored<T: Real>(
    left: FeatureView<'_, T>,
    right: FeatureView<'_, T>,
    pairing: Pairing,
    rows: Range<usize>,
    head: &CorrHead<T>,
) -> Result<CostVolume<T>> {
    let f = factored(&left, &right, pairing, &rows, head)?;
    let w = head.width();
    let nd = pairing.disparities();
    let w2 = output_taps(head);
    let b2 = head.output_bias.data()[0];
    let mut h = vec![T::ZERO; nd * w];
    let mut taps = vec![T::ZERO; nd * 3];
    let mut scores = vec![T::ZERO; rows.len() * left.cols * nd];
    for ii in 0..rows.len() {
        for j in 0..left.cols {
            f.hidden(ii, j, &mut h);
            for d in 0..nd {
                for k in 0..3 {
                    taps[d * 3 + k] = dot(&h[d * w..(d + 1) * w], &w2[k * w..(k + 1) * w]);
                }
            }
            let out = &mut scores[(ii * left.cols + j) * nd..][..nd];
            for d in 0..nd {
                let lo = if d > 0 { taps[(d - 1) * 3] } else { T::ZERO };
                let hi = if d + 1 < nd { taps[(d + 1) * 3 + 2] } else { T::ZERO };
                out[d] = b2 + lo + taps[d * 3 + 1] + hi;
            }
        }
    }
    Ok(CostVolume {
        rows: rows.len(),
        cols: left.cols,
        max_disp: pairing.max_disp,
        scores,
    })
}

/// Backward of [`learned_scores_factored`] (the forward is recomputed one
/// pixel at a time). Returns channel-major gradients for the full left and
/// right feature maps plus the head gradients.
pub fn learned_scores_factored_backward<T: Real>(
    left: FeatureView<'_, T>,
    right: FeatureView<'_, T>,
    pairing: Pairing,
    rows: Range<usize>,
    head: &CorrHead<T>,
    dscores: &[T],
) -> Result<(Vec<T>, Vec<T>, HeadGrads<T>)> {
    let f = factored(&left, &right, pairing, &rows, head)?;
    let w = head.width();
    let nd = pairing.disparities();
    if dscores.len() != rows.len() * left.cols * nd {
        return Err(Error::shape(
            "learned_scores_factored_backward",
            "score gradient length",
            rows.len() * left.cols * nd,
            dscores.len(),
        ));
    }
    let w2 = output_taps(head);
    let mut grads = head.zero_grads();
    let mut dw2 = vec![T::ZERO; 3 * w];
    let lrows = pixel_rows(&left, &rows);
    let rrows = pixel_rows(&right, &rows);
    let mut da = vec![T::ZERO; lrows.rows * 3 * w];
    let mut du = vec![T::ZERO; rrows.rows * 3 * w];
    let mut h = vec![T::ZERO; nd * w];
    let mut dh = vec![T::ZERO; w];
    for ii in 0..rows.len() {
        for j in 0..left.cols {
            let p = ii * left.cols + j;
            let g = &dscores[p * nd..(p + 1) * nd];
            f.hidden(ii, j, &mut h);
            for d in 0..nd {
                grads.output_bias[0] += g[d];
                let hd = &h[d * w..(d + 1) * w];
                // hidden row d feeds score d + 1 through tap 0, d through tap 1, d - 1 through tap 2
                let dt = [
                    if d + 1 < nd { g[d + 1] } else { T::ZERO },
                    g[d],
                    if d > 0 { g[d - 1] } else { T::ZERO },
                ];
                dh.fill(T::ZERO);
                for k in 0..3 {
                    axpy(&mut dw2[k * w..(k + 1) * w], dt[k], hd);
                    axpy(&mut dh, dt[k], &w2[k * w..(k + 1) * w]);
                }
                for (gv, &hv) in dh.iter_mut().zip(hd) {
                    if hv <= T::ZERO {
                        *gv = T::ZERO;
                    }
                }
                add_assign(&mut grads.hidden_bias, &dh);
                f.for_taps(ii, j, d, |k, q| {
                    add_assign(&mut da[(p * 3 + k) * w..(p * 3 + k + 1) * w], &dh);
                    if let Some(q) = q {
                        add_assign(&mut du[(q * 3 + k) * w..(q * 3 + k + 1) * w], &dh);
                    }
                });
            }
        }
    }
    for o in 0..w {
        for k in 0..3 {
            grads.output_weight[o * 3 + k] += dw2[k * w + o];
        }
    }
    let mut dl = vec![T::ZERO; left.data.len()];
    let mut dr = vec![T::ZERO; right.data.len()];
    for (view, src, dsrc, dst, first) in [
        (&left, lrows, &da, &mut dl, 0),
        (&right, rrows, &du, &mut dr, head.theta),
    ] {
        for k in 0..3 {
            let tap_grad = MatLayout {
                rows: src.rows,
                cols: w,
                row_stride: 3 * w,
                col_stride: 1,
                offset: k * w,
            };
            gemm(
                T::ONE,
                view.data,
                src.transposed(),
                dsrc,
                tap_grad,
                T::ONE,
                &mut grads.hidden_weight,
                head.hidden_tap(k, first, head.theta),
            );
            gemm(
                T::ONE,
                dsrc,
                tap_grad,
                head.hidden_weight.data(),
                head.hidden_tap(k, first, head.theta).transposed(),
                T::ONE,
                dst,
                src,
            );
        }
    }
    Ok((dl, dr, grads))
}
