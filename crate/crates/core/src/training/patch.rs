use rand::Rng;

use crate::data_io::StereoSample;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

/// A labeled pixel of a left patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Target {
    pub row: usize,
    pub col: usize,
    pub disp: usize,
}

/// A left patch, the right strip it can match against, and its labels.
///
/// The right patch covers image columns `[left_col - D - K, left_col + s)`
/// where `K` is the model's extra disparity context, so left patch column `c`
/// at disparity `d` pairs with right patch column `c + D + K - d`. Columns left
/// of the image are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchExample<T> {
    /// `1 x C x s x s`
    pub left: Tensor4<T>,
    /// `1 x C x s x (s + D + K)`
    pub right: Tensor4<T>,
    pub max_disp: usize,
    /// `K`: disparities past `max_disp` covered by the right patch.
    pub context: usize,
    /// Image position of the left patch's top-left pixel.
    pub top_row: usize,
    pub left_col: usize,
    pub targets: Vec<Target>,
}

impl<T: Real> PatchExample<T> {
    pub fn size(&self) -> usize {
        self.left.shape().rows
    }

    /// Candidate disparities of patch column `c` whose right pixel lies in
    /// the image: `0..support(c)`.
    pub fn support(&self, c: usize) -> usize {
        self.max_disp.min(self.left_col + c) + 1
    }

    pub fn cast<U: Real>(&self) -> PatchExample<U> {
        PatchExample {
            left: self.left.cast(),
            right: self.right.cast(),
            max_disp: self.max_disp,
            context: self.context,
            top_row: self.top_row,
            left_col: self.left_col,
            targets: self.targets.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.size();
        let want = s + self.max_disp + self.context;
        if self.right.shape().rows != s || self.right.shape().cols != want {
            return Err(Error::shape("patch", "right patch cols", want, self.right.shape().cols));
        }
        if self.targets.is_empty() {
            return Err(Error::NoLabels);
        }
        for (k, t) in self.targets.iter().enumerate() {
            if t.row >= s || t.col >= s {
                return Err(Error::Config(format!(
                    "target {k} at ({}, {}) outside {s}x{s} patch",
                    t.row, t.col
                )));
            }
            if t.disp >= self.support(t.col) {
                return Err(Error::TargetOutOfRange {
                    pixel: k,
                    target: t.disp,
                    max: self.support(t.col) - 1,
                });
            }
        }
        Ok(())
    }
}

/// Copies rows `[r0, r0 + h)` and image columns `[c0, c0 + w)` (which may
/// start left of the image) into a new `1 x C x h x w` tensor, zero outside.
fn window(img: &Tensor4<f32>, r0: usize, h: usize, c0: isize, w: usize) -> Tensor4<f32> {
    let s = img.shape();
    let mut out = Tensor4::zeros(Shape4::new(1, s.channels, h, w));
    for c in 0..s.channels {
        for i in 0..h {
            for j in 0..w {
                let x = c0 + j as isize;
                if x >= 0 && (x as usize) < s.cols {
                    out.set(0, c, i, j, img.get(0, c, r0 + i, x as usize));
                }
            }
        }
    }
    out
}

/// Draws a patch position uniformly and labels every in-patch pixel whose
/// rounded ground truth is at most `max_disp` and whose match lies inside the
/// right image. The right strip extends `context` columns further left.
/// Retries up to `max_retries` positions; `Ok(None)` if none of
/// them had a label.
pub fn sample_patch(
    sample: &StereoSample,
    size: usize,
    max_disp: usize,
    context: usize,
    max_retries: usize,
    rng: &mut impl Rng,
) -> Result<Option<PatchExample<f32>>> {
    let (rows, cols) = (sample.rows(), sample.cols());
    if rows < size || cols < size {
        return Err(Error::Config(format!(
            "{}: image {rows}x{cols} is smaller than the {size}x{size} patch",
            sample.id
        )));
    }
    let Some(gt) = &sample.gt else {
        return Ok(None);
    };
    for _ in 0..max_retries.max(1) {
        let i0 = rng.random_range(0..=rows - size);
        let j0 = rng.random_range(0..=cols - size);
        let mut targets = Vec::new();
        for r in 0..size {
            for c in 0..size {
                let Some(d) = gt.get(i0 + r, j0 + c) else { continue };
                let d = d.round() as usize;
                if d <= max_disp && d <= j0 + c {
                    targets.push(Target {
                        row: r,
                        col: c,
                        disp: d,
                    });
                }
            }
        }
        if targets.is_empty() {
            continue;
        }
        return Ok(Some(PatchExample {
            left: window(&sample.left, i0, size, j0 as isize, size),
            right: window(
                &sample.right,
                i0,
                size,
                j0 as isize - (max_disp + context) as isize,
                size + max_disp + context,
            ),
            max_disp,
            context,
            top_row: i0,
            left_col: j0,
            targets,
        }));
    }
    log::warn!("{}: no labeled pixel in {max_retries} patch draws, skipping", sample.id);
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{synth_generate, DisparityMap, SynthConfig};
    use crate::rng::{stream, Stream};

    fn sample() -> StereoSample {
        let cfg = SynthConfig {
            count: 1,
            rows: 20,
            cols: 40,
            max_disp: 8,
            ..SynthConfig::default()
        };
        synth_generate(&cfg, 1).unwrap()[0].to_stereo_sample()
    }

    #[test]
    fn geometry_and_dense_labels() {
        let s = sample();
        let gt = s.gt.as_ref().unwrap();
        let mut rng = stream(0, Stream::Test);
        for _ in 0..10 {
            let p = sample_patch(&s, 10, 16, 0, 20, &mut rng).unwrap().unwrap();
            assert_eq!(p.left.shape(), Shape4::new(1, 1, 10, 10));
            assert_eq!(p.right.shape(), Shape4::new(1, 1, 10, 26));
            p.validate().unwrap();
            let mut want = Vec::new();
            for r in 0..10 {
                for c in 0..10 {
                    let d = gt.get(p.top_row + r, p.left_col + c).unwrap() as usize;
                    if d <= p.left_col + c {
                        want.push(Target {
                            row: r,
                            col: c,
                            disp: d,
                        });
                    }
                }
            }
            assert_eq!(p.targets, want);
            for r in 0..10 {
                for c in 0..10 {
                    assert_eq!(p.left.get(0, 0, r, c), s.left.get(0, 0, p.top_row + r, p.left_col + c));
                }
            }
        }
    }

    #[test]
    fn out_of_range_and_invalid_pixels_are_dropped() {
        let mut s = sample();
        let mut gt = DisparityMap::dense(20, 40, vec![3.0; 800]);
        for i in 0..20 {
            gt.set(i, 5, None);
            gt.set(i, 6, Some(30.0));
        }
        s.gt = Some(gt);
        let mut rng = stream(1, Stream::Test);
        for _ in 0..20 {
            let p = sample_patch(&s, 10, 8, 0, 20, &mut rng).unwrap().unwrap();
            for t in &p.targets {
                assert_eq!(t.disp, 3);
                assert!(p.left_col + t.col >= 3);
                assert!(![5, 6].contains(&(p.left_col + t.col)));
            }
        }
    }

    #[test]
    fn border_patch_zero_pads_the_right_strip() {
        let s = sample();
        let mut rng = stream(2, Stream::Test);
        let p = loop {
            let p = sample_patch(&s, 10, 16, 2, 20, &mut rng).unwrap().unwrap();
            if p.left_col == 0 {
                break p;
            }
        };
        assert_eq!(p.right.shape().cols, 28);
        for i in 0..10 {
            for j in 0..18 {
                assert_eq!(p.right.get(0, 0, i, j), 0.0);
            }
            for j in 0..10 {
                assert_eq!(p.right.get(0, 0, i, 18 + j), s.right.get(0, 0, p.top_row + i, j));
            }
        }
        assert_eq!(p.support(0), 1);
    }

    #[test]
    fn unlabeled_images_are_skipped() {
        let mut s = sample();
        s.gt = Some(DisparityMap::invalid(20, 40));
        let mut rng = stream(3, Stream::Test);
        assert!(sample_patch(&s, 10, 8, 0, 5, &mut rng).unwrap().is_none());
        assert!(sample_patch(&s, 30, 8, 0, 5, &mut rng).is_err());
    }
}
