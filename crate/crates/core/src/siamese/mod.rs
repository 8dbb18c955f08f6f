//! Shared-weight siamese feature extractor.

pub mod arch;
pub mod network;

pub use arch::{receptive_field, stacked_receptive_field, ArchSpec, LayerSpec, Preset};
pub use network::{BatchNormParams, Block, FeatureMap, FeatureView, InitConfig, Layer, Network, Trace};
