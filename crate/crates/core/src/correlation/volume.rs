use std::ops::Range;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::siamese::FeatureView;

/// How left columns map onto right columns: left pixel `j` at disparity `d`
/// pairs with right column `j + right_offset - d`.
///
/// Full images use offset 0. Training patches use a right patch that starts
/// `max_disp` columns earlier than the left patch, so their offset is `max_disp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pairing {
    pub max_disp: usize,
    pub right_offset: usize,
}

impl Pairing {
    pub fn full_image(max_disp: usize) -> Self {
        Pairing {
            max_disp,
            right_offset: 0,
        }
    }

    pub fn disparities(&self) -> usize {
        self.max_disp + 1
    }

    #[inline]
    pub fn right_col(&self, j: usize, d: usize, right_cols: usize) -> Option<usize> {
        let c = (j + self.right_offset).checked_sub(d)?;
        (c < right_cols).then_some(c)
    }

    pub(crate) fn check(&self, left: &FeatureView<'_, impl Real>, right: &FeatureView<'_, impl Real>) -> Result<()> {
        if left.theta != right.theta {
            return Err(Error::shape("correlation", "feature channels", left.theta, right.theta));
        }
        if left.rows != right.rows {
            return Err(Error::shape("correlation", "rows", left.rows, right.rows));
        }
        if self.right_offset == 0 {
            if left.cols != right.cols {
                return Err(Error::shape("correlation", "cols", left.cols, right.cols));
            }
            if self.max_disp >= left.cols {
                return Err(Error::DisparityTooLarge {
                    max_disp: self.max_disp,
                    cols: left.cols,
                });
            }
        }
        Ok(())
    }
}

/// Matching score for every pixel and candidate disparity, laid out
/// `rows x cols x (max_disp + 1)`. Entry `(i, j, d)` scores left pixel
/// `(i, j)` against right pixel `(i, j - d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume<T> {
    pub rows: usize,
    pub cols: usize,
    pub max_disp: usize,
    pub scores: Vec<T>,
}

impl<T: Real> CostVolume<T> {
    pub fn disparities(&self) -> usize {
        self.max_disp + 1
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, d: usize) -> T {
        self.scores[(i * self.cols + j) * self.disparities() + d]
    }

    pub fn at(&self, i: usize, j: usize) -> &[T] {
        let n = self.disparities();
        let o = (i * self.cols + j) * n;
        &self.scores[o..o + n]
    }

    /// Number of candidate disparities whose right pixel lies inside the image
    /// (always a prefix `0..support`).
    pub fn support(&self, j: usize) -> usize {
        self.max_disp.min(j) + 1
    }

    /// The leading `max_disp + 1` scores of every pixel.
    pub fn truncated(&self, max_disp: usize) -> Self {
        assert!(max_disp <= self.max_disp, "cannot widen a cost volume");
        let (n, m) = (self.disparities(), max_disp + 1);
        let scores = self.scores.chunks_exact(n).flat_map(|c| &c[..m]).copied().collect();
        CostVolume {
            rows: self.rows,
            cols: self.cols,
            max_disp,
            scores,
        }
    }
}

/// Inner-product cost volume between two same-size feature maps.
/// Pairs that fall off the left edge of the right image get [`Real::LOWEST`].
pub fn inner_product_volume<T: Real>(
    left: FeatureView<'_, T>,
    right: FeatureView<'_, T>,
    max_disp: usize,
) -> Result<CostVolume<T>> {
    let pairing = Pairing::full_image(max_disp);
    pairing.check(&left, &right)?;
    Ok(inner_product_rows(left, right, pairing, 0..left.rows))
}

/// Pixel-major copy of rows `rows` of a feature map: `[pixel][channel]`.
pub(crate) fn pixel_major<T: Real>(f: &FeatureView<'_, T>, rows: Range<usize>) -> Vec<T> {
    let n = rows.len() * f.cols;
    let mut out = vec![T::ZERO; n * f.theta];
    let plane = f.plane();
    for c in 0..f.theta {
        let src = &f.data[c * plane + rows.start * f.cols..c * plane + rows.end * f.cols];
        for (p, &v) in src.iter().enumerate() {
            out[p * f.theta + c] = v;
        }
    }
    out
}

pub(crate) fn inner_product_rows<T: Real>(
    left: FeatureView<'_, T>,
    right: FeatureView<'_, T>,
    pairing: Pairing,
    rows: Range<usize>,
) -> CostVolume<T> {
    let theta = left.theta;
    let nd = pairing.disparities();
    let lt = pixel_major(&left, rows.clone());
    let rt = pixel_major(&right, rows.clone());
    let mut scores = vec![T::LOWEST; rows.len() * left.cols * nd];
    for ii in 0..rows.len() {
        for j in 0..left.cols {
            let p = ii * left.cols + j;
            let lv = &lt[p * theta..(p + 1) * theta];
            for d in 0..nd {
                if let Some(rc) = pairing.right_col(j, d, right.cols) {
                    let q = ii * right.cols + rc;
                    let rv = &rt[q * theta..(q + 1) * theta];
                    scores[p * nd + d] = lv.iter().zip(rv).map(|(&a, &b)| a * b).sum();
                }
            }
        }
    }
    CostVolume {
        rows: rows.len(),
        cols: left.cols,
        max_disp: pairing.max_disp,
        scores,
    }
}

/// Gradients of the inner-product volume w.r.t. both feature maps
/// (channel-major, same layout as the inputs). Off-image entries carry no gradient.
pub fn inner_product_backward<T: Real>(
    left: FeatureView<'_, T>,
    right: FeatureView<'_, T>,
    pairing: Pairing,
    grad: &[T],
) -> (Vec<T>, Vec<T>) {
    let nd = pairing.disparities();
    assert_eq!(grad.len(), left.plane() * nd, "inner_product_backward: gradient length");
    let mut dl = vec![T::ZERO; left.data.len()];
    let mut dr = vec![T::ZERO; right.data.len()];
    let (lp, rp) = (left.plane(), right.plane());
    for i in 0..left.rows {
        for j in 0..left.cols {
            let p = i * left.cols + j;
            for d in 0..nd {
                let g = grad[p * nd + d];
                let Some(rc) = pairing.right_col(j, d, right.cols) else {
                    continue;
                };
                if g == T::ZERO {
                    continue;
                }
                let q = i * right.cols + rc;
                for c in 0..left.theta {
                    dl[c * lp + p] += g * right.data[c * rp + q];
                    dr[c * rp + q] += g * left.data[c * lp + p];
                }
            }
        }
    }
    (dl, dr)
}
