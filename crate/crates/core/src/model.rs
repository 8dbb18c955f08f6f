//! A complete matcher: one siamese branch plus its correlation stage.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correlation::{
    build_psi_rows, inner_product_rows, learned_scores, learned_scores_factored, CorrHead, CostVolume, Pairing,
    HEAD_CONTEXT,
};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{stream, Stream};
use crate::siamese::{ArchSpec, FeatureMap, FeatureView, InitConfig, Network};
use crate::tensor::{Shape4, Tensor4};

/// How left and right features are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrMode {
    /// Dot product of the two descriptors.
    Inner,
    /// Small network over the paired descriptors.
    Learned,
}

impl CorrMode {
    pub fn name(self) -> &'static str {
        match self {
            CorrMode::Inner => "inner",
            CorrMode::Learned => "learned",
        }
    }
}

impl fmt::Display for CorrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inner" => Ok(CorrMode::Inner),
            "learned" => Ok(CorrMode::Learned),
            other => Err(Error::Config(format!(
                "unknown correlation mode `{other}` (inner|learned)"
            ))),
        }
    }
}

/// Evaluation strategy for the learned head. Both give the same scores up to
/// floating-point rounding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRoute {
    /// Build the paired feature space and run the head over it. Memory grows
    /// with `rows * cols * (D + 1) * 2θ`, so use small bands.
    Psi,
    /// Project each pixel's descriptor once per kernel tap and combine.
    #[default]
    Factored,
}

impl FromStr for ScoreRoute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psi" => Ok(ScoreRoute::Psi),
            "factored" => Ok(ScoreRoute::Factored),
            other => Err(Error::Config(format!("unknown score route `{other}` (psi|factored)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoModel<T> {
    pub net: Network<T>,
    /// Present exactly when the model uses learned correlation.
    pub head: Option<CorrHead<T>>,
}

impl<T: Real> StereoModel<T> {
    pub fn build(arch: &ArchSpec, mode: CorrMode, init: InitConfig, seed: u64) -> Result<Self> {
        let net = Network::build(arch, init, seed)?;
        let head = match mode {
            CorrMode::Inner => None,
            CorrMode::Learned => Some(CorrHead::new(arch.theta, init, &mut stream(seed, Stream::HeadInit))?),
        };
        Ok(StereoModel { net, head })
    }

    pub fn arch(&self) -> &ArchSpec {
        self.net.arch()
    }

    pub fn mode(&self) -> CorrMode {
        if self.head.is_some() {
            CorrMode::Learned
        } else {
            CorrMode::Inner
        }
    }

    pub fn params(&self) -> Vec<(String, &Tensor4<T>)> {
        let mut out = self.net.params();
        if let Some(h) = &self.head {
            out.extend(h.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        let mut out = self.net.params_mut();
        if let Some(h) = &mut self.head {
            out.extend(h.params_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.shape().len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn cast<U: Real>(&self) -> StereoModel<U> {
        StereoModel {
            net: self.net.cast(),
            head: self.head.as_ref().map(|h| h.cast()),
        }
    }

    /// Extra disparities of right-image context the correlation stage reads.
    pub fn context(&self) -> usize {
        if self.head.is_some() {
            HEAD_CONTEXT
        } else {
            0
        }
    }

    /// Infer-mode descriptors of one `1 x C x H x W` image.
    pub fn features(&self, image: &Tensor4<T>) -> Result<FeatureMap<T>> {
        self.net.extract(image)
    }

    /// Scores of left rows `rows` against `right`.
    pub fn scores(
        &self,
        left: FeatureView<'_, T>,
        right: FeatureView<'_, T>,
        pairing: Pairing,
        rows: Range<usize>,
        route: ScoreRoute,
    ) -> Result<CostVolume<T>> {
        pairing.check(&left, &right)?;
        if rows.end > left.rows || rows.is_empty() {
            return Err(Error::Config(format!("row band {rows:?} outside 0..{}", left.rows)));
        }
        let Some(h) = &self.head else {
            return Ok(inner_product_rows(left, right, pairing, rows));
        };
        // a full image cannot pair past its own width
        let context = if pairing.right_offset == 0 {
            HEAD_CONTEXT.min(left.cols - 1 - pairing.max_disp)
        } else {
            HEAD_CONTEXT
        };
        let wide = Pairing {
            max_disp: pairing.max_disp + context,
            ..pairing
        };
        let volume = match route {
            ScoreRoute::Psi => learned_scores(&build_psi_rows(left, right, wide, rows), h)?,
            ScoreRoute::Factored => learned_scores_factored(left, right, wide, rows, h)?,
        };
        Ok(volume.truncated(pairing.max_disp))
    }
}

/// Stacks single-image tensors into one batch.
pub fn stack<T: Real>(items: &[Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = items
        .first()
        .ok_or_else(|| Error::Config("empty batch".into()))?
        .shape();
    let mut data = Vec::with_capacity(first.len() * items.len());
    for t in items {
        let s = t.shape();
        if s != first {
            return Err(Error::shape("stack", "item elements", first.len(), s.len()));
        }
        data.extend_from_slice(t.data());
    }
    Tensor4::from_vec(
        Shape4::new(items.len() * first.batch, first.channels, first.rows, first.cols),
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siamese::Preset;

    #[test]
    fn build_matches_mode() {
        let arch = ArchSpec::preset(Preset::S4).with_theta(8);
        let inner = StereoModel::<f32>::build(&arch, CorrMode::Inner, InitConfig::default(), 1).unwrap();
        let learned = StereoModel::<f32>::build(&arch, CorrMode::Learned, InitConfig::default(), 1).unwrap();
        assert_eq!(inner.mode(), CorrMode::Inner);
        assert_eq!(learned.mode(), CorrMode::Learned);
        assert_eq!(inner.net, learned.net);
        assert_eq!(
            learned.param_count() - inner.param_count(),
            CorrHead::<f32>::param_count(8)
        );
    }

    fn feature_pair(theta: usize, rows: usize, cols: usize, seed: u64) -> (FeatureMap<f32>, FeatureMap<f32>) {
        let mut rng = stream(seed, Stream::Test);
        let mut fmap = || FeatureMap {
            theta,
            rows,
            cols,
            data: crate::rng::uniform_tensor(Shape4::new(1, theta, rows, cols), &mut rng)
                .data()
                .to_vec(),
        };
        (fmap(), fmap())
    }

    #[test]
    fn learned_scores_do_not_depend_on_the_disparity_range() {
        let arch = ArchSpec::preset(Preset::S4).with_theta(6);
        let m = StereoModel::<f32>::build(&arch, CorrMode::Learned, InitConfig::default(), 4).unwrap();
        let (l, r) = feature_pair(6, 5, 40, 1);
        for route in [ScoreRoute::Psi, ScoreRoute::Factored] {
            let small = m
                .scores(l.view(), r.view(), Pairing::full_image(8), 0..5, route)
                .unwrap();
            let large = m
                .scores(l.view(), r.view(), Pairing::full_image(20), 0..5, route)
                .unwrap();
            assert_eq!(small.max_disp, 8);
            assert_eq!(large.truncated(8), small, "{route:?}");
        }
    }

    #[test]
    fn context_is_capped_by_the_image_width() {
        let arch = ArchSpec::preset(Preset::S4).with_theta(4);
        let m = StereoModel::<f32>::build(&arch, CorrMode::Learned, InitConfig::default(), 5).unwrap();
        let (l, r) = feature_pair(4, 2, 10, 2);
        let v = m
            .scores(l.view(), r.view(), Pairing::full_image(9), 0..2, ScoreRoute::Factored)
            .unwrap();
        assert_eq!(v.max_disp, 9);
        assert!(m
            .scores(l.view(), r.view(), Pairing::full_image(10), 0..2, ScoreRoute::Factored)
            .is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("Learned".parse::<CorrMode>().unwrap(), CorrMode::Learned);
        assert!("dot".parse::<CorrMode>().is_err());
        assert_eq!("factored".parse::<ScoreRoute>().unwrap(), ScoreRoute::Factored);
    }
}
