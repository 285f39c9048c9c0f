//! Run configuration shared by the library entry points and the CLI.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::fusion::FusionConfig;
use crate::metrics::MetricConfig;
use crate::rarity::DEFAULT_BIN_COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// ONNX model path; `None` runs the seeded reference backbone.
    pub model: Option<PathBuf>,
    /// Built-in topology name or a topology JSON path.
    pub topology: String,
    /// Working resolution `(width, height)`; `None` uses the topology's input size.
    pub working_size: Option<(usize, usize)>,
    pub bin_count: usize,
    pub fusion: FusionConfig,
    pub metrics: MetricConfig,
    pub features_from: Option<PathBuf>,
    pub dump_conspicuity: Option<PathBuf>,
    pub out: PathBuf,
    /// Worker threads; 0 lets the thread pool decide.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            topology: "vgg16-reference".into(),
            working_size: None,
            bin_count: DEFAULT_BIN_COUNT,
            fusion: FusionConfig::default(),
            metrics: MetricConfig::default(),
            features_from: None,
            dump_conspicuity: None,
            out: PathBuf::from("out"),
            threads: 0,
        }
    }
}
