use std::ops::Range;

use super::volume::Pairing;
use crate::error::Result;
use crate::real::Real;
use crate::siamese::FeatureView;

/// Paired feature space: for every left pixel `p = i * cols + j` and every
/// disparity `d`, the concatenation `[left(i, j), right(i, j - d)]` of length
/// `2 * theta`, with zeros where `j - d` falls off the image.
///
/// Logically `(rows * cols) x (max_disp + 1) x 2theta`. Each pixel's block is
/// stored with one zero row on either side of the disparity axis, which is the
/// zero padding the 1x3 correlation kernels need.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiVolume<T> {
    pub rows: usize,
    pub cols: usize,
    pub max_disp: usize,
    pub theta: usize,
    pub(crate) data: Vec<T>,
}

impl<T: Real> PsiVolume<T> {
    pub(crate) fn zeros(rows: usize, cols: usize, max_disp: usize, theta: usize) -> Self {
        PsiVolume {
            rows,
            cols,
            max_disp,
            theta,
            data: vec![T::ZERO; rows * cols * (max_disp + 3) * 2 * theta],
        }
    }

    /// `(pixels, disparities, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows * self.cols, self.max_disp + 1, 2 * self.theta)
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// Row index in the padded storage.
    #[inline]
    pub(crate) fn row(&self, p: usize, d: usize) -> usize {
        p * (self.max_disp + 3) + d + 1
    }

    pub(crate) fn padded_rows(&self) -> usize {
        self.pixels() * (self.max_disp + 3)
    }

    /// The `2 * theta` features paired at pixel `p`, disparity `d`.
    pub fn at(&self, p: usize, d: usize) -> &[T] {
        let w = 2 * self.theta;
        let r = self.row(p, d);
        &self.data[r * w..(r + 1) * w]
    }

    pub(crate) fn at_mut(&mut self, p: usize, d: usize) -> &mut [T] {
        let w = 2 * self.theta;
        let r = self.row(p, d);
        &mut self.data[r * w..(r + 1) * w]
    }

    /// Unpadded copy in `[pixel][disparity][channel]` order.
    pub fn to_dense(&self) -> Vec<T> {
        let (p, d, _) = self.dims();
        let mut out = Vec::with_capacity(p * d * 2 * self.theta);
        for pi in 0..p {
            for di in 0..d {
                out.extend_from_slice(self.at(pi, di));
            }
        }
        out
    }
}

/// Builds the paired feature space for two same-size feature maps.
pub fn build_psi<T: Real>(
    left: FeatureView<'_, T>,
    right: FeatureView<'_, T>,
    max_disp: usize,
) -> Result<PsiVolume<T>> {
    let pairing = Pairing::full_image(max_disp);
    pairing.check(&left, &right)?;
    Ok(build_psi_rows(left, right, pairing, 0..left.rows))
}

pub(crate) fn build_psi_rows<T: Real>(
    left: FeatureView<'_, T>,
    right: FeatureView<'_, T>,
    pairing: Pairing,
    rows: Range<usize>,
) -> PsiVolume<T> {
    let theta = left.theta;
    let mut psi = PsiVolume::zeros(rows.len(), left.cols, pairing.max_disp, theta);
    let lt = super::volume::pixel_major(&left, rows.clone());
    let rt = super::volume::pixel_major(&right, rows.clone());
    for ii in 0..rows.len() {
        for j in 0..left.cols {
            let p = ii * left.cols + j;
            let lv = &lt[p * theta..(p + 1) * theta];
            for d in 0..=pairing.max_disp {
                let dst = psi.at_mut(p, d);
                dst[..theta].copy_from_slice(lv);
                if let Some(rc) = pairing.right_col(j, d, right.cols) {
                    let q = ii * right.cols + rc;
                    dst[theta..].copy_from_slice(&rt[q * theta..(q + 1) * theta]);
                }
            }
        }
    }
    psi
}

/// Adjoint of [`build_psi_rows`]: accumulates a gradient w.r.t. the paired
/// space into channel-major gradients of the two feature maps.
pub(crate) fn psi_backward<T: Real>(
    grad: &PsiVolume<T>,
    left: FeatureView<'_, T>,
    right: FeatureView<'_, T>,
    pairing: Pairing,
    rows: Range<usize>,
    dl: &mut [T],
    dr: &mut [T],
) {
    let theta = left.theta;
    let (lp, rp) = (left.plane(), right.plane());
    for ii in 0..rows.len() {
        let i = rows.start + ii;
        for j in 0..left.cols {
            let p = ii * left.cols + j;
            let lpix = i * left.cols + j;
            for d in 0..=pairing.max_disp {
                let g = grad.at(p, d);
                for c in 0..theta {
                    dl[c * lp + lpix] += g[c];
                }
                if let Some(rc) = pairing.right_col(j, d, right.cols) {
                    let rpix = i * right.cols + rc;
                    for c in 0..theta {
                        dr[c * rp + rpix] += g[theta + c];
                    }
                }
            }
        }
    }
}
