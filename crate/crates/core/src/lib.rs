//! Feature-engineered visual saliency from the rarity of deep CNN activations.
//!
//! The pipeline runs a convolutional backbone over an image, scores every
//! activation map by how rare each value is within that map, and fuses the
//! rarity maps layer by layer and group by group into one saliency map.
//! [`metrics`] and [`dataset`] provide the evaluation side: eye-tracking
//! scores, singleton-search measures and loaders for the benchmark layouts.

pub mod config;
pub mod dataset;
pub mod features;
pub mod fusion;
pub mod imageops;
pub mod metrics;
pub mod pipeline;
pub mod rarity;
pub mod tensor;

pub use config::RunConfig;
pub use dataset::{DatasetError, Manifest, Stimulus};
pub use features::{FeatureExtractor, LayerActivations, ModelError, NetworkTopology, Preprocess};
pub use fusion::{ConspicuityMap, FusionConfig, FusionError, Level, SaliencyBreakdown, SaliencyEngine, SaliencyMap};
pub use metrics::{FixationSet, MetricError, RegionMasks};
pub use pipeline::DeepRare;
pub use rarity::{RarityError, RarityHistogram, RarityMap, DEFAULT_BIN_COUNT};
pub use tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Rarity(#[from] RarityError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
