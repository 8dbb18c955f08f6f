//! Fixtures shared by the benchmarks.

use siamstereo::data_io::{synth_generate, StereoSample, SynthConfig};
use siamstereo::rng::{stream, uniform_tensor, Stream};
use siamstereo::siamese::{ArchSpec, FeatureMap, InitConfig, Preset};
use siamstereo::{CorrMode, Shape4, StereoModel, Tensor4};

/// A model with random weights and batchnorm moments taken from one pass over
/// `image`, ready for inference.
pub fn ready_model(preset: Preset, corr: CorrMode, theta: usize, image: &Tensor4<f32>) -> StereoModel<f32> {
    let arch = ArchSpec::preset(preset).with_theta(theta);
    let mut model = StereoModel::build(&arch, corr, InitConfig::default(), 1).expect("valid preset");
    model.net.forward_train(image).expect("image fits the network");
    model
}

/// A synthetic pair of the given size.
pub fn stereo_pair(rows: usize, cols: usize, max_disp: usize) -> StereoSample {
    let cfg = SynthConfig {
        count: 1,
        rows,
        cols,
        max_disp,
        ..SynthConfig::default()
    };
    synth_generate(&cfg, 1).expect("valid synth config")[0].to_stereo_sample()
}

pub fn random_tensor(shape: Shape4, seed: u64) -> Tensor4<f32> {
    uniform_tensor(shape, &mut stream(seed, Stream::Test))
}

pub fn random_features(theta: usize, rows: usize, cols: usize, seed: u64) -> FeatureMap<f32> {
    FeatureMap::from_tensor(random_tensor(Shape4::new(1, theta, rows, cols), seed))
}
