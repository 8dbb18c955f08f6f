//! Images, disparity maps, KITTI-layout datasets and synthetic scenes.

pub mod disparity;
pub mod image;
pub mod kitti;
pub mod synth;

pub use self::image::{load_image, normalize, save_gray_png, ColorMode, NORMALIZE_EPS};
pub use disparity::{
    decode_disparity_png, encode_disparity_png, read_disparity_png, write_disparity_png, DisparityMap,
};
pub use kitti::{load_kitti, split_ids, DatasetSplit, Edition, StereoSample};
pub use synth::{synth_generate, write_dataset, SynthConfig, SynthSample};
