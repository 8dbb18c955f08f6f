//! Full-image disparity estimation and error metrics.

pub mod metrics;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{
    bad_pixels, evaluate, evaluate_dirs, pixel_error, DirEvaluation, EvalInput, MetricRecord, MetricsReport, Subset,
    AGGREGATE, DEFAULT_THRESHOLDS,
};

use crate::correlation::{CostVolume, Pairing};
use crate::data_io::DisparityMap;
use crate::error::{Error, Result};
use crate::model::{ScoreRoute, StereoModel};
use crate::real::Real;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferConfig {
    pub max_disp: usize,
    /// Image rows scored together; only one band's intermediate data is alive per worker.
    pub band_rows: usize,
    pub route: ScoreRoute,
    /// Keep the full cost volume in the result.
    pub keep_volume: bool,
}

impl InferConfig {
    pub const DEFAULT_BAND_ROWS: usize = 8;

    pub fn new(max_disp: usize) -> Self {
        InferConfig {
            max_disp,
            band_rows: Self::DEFAULT_BAND_ROWS,
            route: ScoreRoute::default(),
            keep_volume: false,
        }
    }
}

pub struct Inference {
    pub disparity: DisparityMap,
    pub volume: Option<CostVolume<f32>>,
}

/// Index of the largest of `scores[..support]`; ties go to the smallest index.
pub fn argmax_disparity<T: Real>(scores: &[T], support: usize) -> usize {
    let mut best = 0;
    for (d, &s) in scores[..support].iter().enumerate().skip(1) {
        if s > scores[best] {
            best = d;
        }
    }
    best
}

/// Winner-take-all disparities of a volume, restricted at every pixel to the
/// disparities whose right pixel is inside the image.
pub fn winner_take_all<T: Real>(volume: &CostVolume<T>) -> DisparityMap {
    let mut map = DisparityMap::invalid(volume.rows, volume.cols);
    for i in 0..volume.rows {
        for j in 0..volume.cols {
            let d = argmax_disparity(volume.at(i, j), volume.support(j));
            map.set(i, j, Some(d as f32));
        }
    }
    map
}

/// Disparity map of a standardized `1 x C x H x W` image pair.
///
/// Features are extracted once per image; scores are computed band by band
/// (bands in parallel) and the per-pixel argmax taken. The result does not
/// depend on the band height.
pub fn infer(
    model: &StereoModel<f32>,
    left: &Tensor4<f32>,
    right: &Tensor4<f32>,
    cfg: &InferConfig,
) -> Result<Inference> {
    let (ls, rs) = (left.shape(), right.shape());
    if ls != rs {
        return Err(Error::Config(format!("left image is {ls} but right image is {rs}")));
    }
    if cfg.max_disp >= ls.cols {
        return Err(Error::DisparityTooLarge {
            max_disp: cfg.max_disp,
            cols: ls.cols,
        });
    }
    if cfg.band_rows == 0 {
        return Err(Error::Config("band height must be at least 1".into()));
    }
    let (fl, fr) = rayon::join(|| model.features(left), || model.features(right));
    let (fl, fr) = (fl?, fr?);
    let pairing = Pairing::full_image(cfg.max_disp);
    let bands: Vec<(usize, usize)> = (0..ls.rows)
        .step_by(cfg.band_rows)
        .map(|r0| (r0, (r0 + cfg.band_rows).min(ls.rows)))
        .collect();
    let parts = bands
        .par_iter()
        .map(|&(r0, r1)| {
            let v = model.scores(fl.view(), fr.view(), pairing, r0..r1, cfg.route)?;
            let d = winner_take_all(&v);
            Ok((d, cfg.keep_volume.then_some(v)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut disparity = DisparityMap::invalid(ls.rows, ls.cols);
    let mut scores = Vec::new();
    for ((r0, _), (d, v)) in bands.iter().zip(parts) {
        let o = r0 * ls.cols;
        disparity.values[o..o + d.len()].copy_from_slice(&d.values);
        disparity.valid[o..o + d.len()].copy_from_slice(&d.valid);
        if let Some(v) = v {
            scores.extend_from_slice(&v.scores);
        }
    }
    let volume = cfg.keep_volume.then_some(CostVolume {
        rows: ls.rows,
        cols: ls.cols,
        max_disp: cfg.max_disp,
        scores,
    });
    Ok(Inference { disparity, volume })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CorrMode;
    use crate::siamese::{ArchSpec, InitConfig, Preset};
    use crate::tensor::Shape4;
    use crate::testutil::random_tensor;

    fn model(mode: CorrMode) -> StereoModel<f32> {
        let arch = ArchSpec::preset(Preset::S4).with_theta(8);
        let mut m = StereoModel::build(&arch, mode, InitConfig::default(), 1).unwrap();
        // one train-mode pass so batchnorm has running moments
        m.net
            .forward_train(&random_tensor(Shape4::new(2, 1, 10, 10), 2))
            .unwrap();
        m
    }

    #[test]
    fn argmax_ties_pick_smallest() {
        assert_eq!(argmax_disparity(&[1.0f32, 3.0, 3.0, 2.0], 4), 1);
        assert_eq!(argmax_disparity(&[1.0f32, 3.0, 9.0], 2), 1);
        assert_eq!(argmax_disparity(&[f32::LOWEST; 3], 3), 0);
    }

    #[test]
    fn argmax_ignores_per_pixel_offsets() {
        let s: Vec<f32> = crate::testutil::random_vec(17, 3);
        let shifted: Vec<f32> = s.iter().map(|v| v + 5.0).collect();
        assert_eq!(argmax_disparity(&s, 17), argmax_disparity(&shifted, 17));
    }

    #[test]
    fn band_height_does_not_change_the_output() {
        for mode in [CorrMode::Inner, CorrMode::Learned] {
            let m = model(mode);
            let l = random_tensor(Shape4::new(1, 1, 13, 24), 4);
            let r = random_tensor(Shape4::new(1, 1, 13, 24), 5);
            let mut cfg = InferConfig::new(6);
            cfg.keep_volume = true;
            let full = {
                cfg.band_rows = 13;
                infer(&m, &l, &r, &cfg).unwrap()
            };
            for band in [1, 4, 8, 100] {
                cfg.band_rows = band;
                let out = infer(&m, &l, &r, &cfg).unwrap();
                assert_eq!(out.disparity, full.disparity);
                assert_eq!(out.volume.unwrap().scores, full.volume.as_ref().unwrap().scores);
            }
            for route in [ScoreRoute::Psi, ScoreRoute::Factored] {
                cfg.route = route;
                let out = infer(&m, &l, &r, &cfg).unwrap();
                assert!(out.disparity.values.iter().all(|&d| d <= 6.0));
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model(CorrMode::Inner);
        let l = random_tensor(Shape4::new(1, 1, 8, 12), 4);
        let r = random_tensor(Shape4::new(1, 1, 8, 14), 5);
        assert!(infer(&m, &l, &r, &InferConfig::new(4)).is_err());
        assert!(matches!(
            infer(&m, &l, &l, &InferConfig::new(12)),
            Err(Error::DisparityTooLarge { .. })
        ));
    }
}
