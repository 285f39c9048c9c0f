//! Convolutional feature extraction: backbone loading, per-layer activation
//! taps, input conditioning, and on-disk feature dumps.
//!
//! A [`FeatureExtractor`] is immutable and `Send + Sync`; share one across
//! worker threads or clone it (clones share the weights through an `Arc`).

mod dump;
mod net;
pub mod onnx;
mod reference;
mod topology;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

pub use dump::{layer_dump_path, read_feature_dump, write_feature_dump};
pub use net::{Conv2d, ConvNet, MaxPool2d, Node, Op, UnsupportedNode};
pub use reference::{reference_vgg16, REFERENCE_SEED};
pub use topology::{ChannelOrder, ConvLayerSpec, FaceChannel, NetworkTopology, Preprocess, BUILTIN_TOPOLOGIES};

use crate::imageops::resize_bilinear_chw;
use crate::tensor::{Tensor, TensorError};
use onnx::ModelProto;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file {0} does not exist")]
    MissingFile(PathBuf),
    #[error("cannot decode ONNX model: {0}")]
    Decode(String),
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("topology does not match model at layer {layer:?}: {reason}")]
    TopologyMismatch { layer: String, reason: String },
    #[error("node {node:?} uses unsupported operator {op_type}: {reason}")]
    UnsupportedOperator {
        node: String,
        op_type: String,
        reason: String,
    },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("unknown topology {0:?} (built-ins: vgg16, vgg16-reference; or a JSON file path)")]
    UnknownTopology(String),
    #[error("expected an RGB image tensor [3, H, W], got shape {0:?}")]
    NotRgb(Vec<usize>),
    #[error("working size must be positive, got {0}x{1}")]
    BadWorkingSize(usize, usize),
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("feature dump {path}: {reason}")]
    FeatureDump { path: PathBuf, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Activations of one convolutional layer, `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerActivations {
    pub layer_index: u32,
    pub group_index: u32,
    pub maps: Tensor,
}

impl LayerActivations {
    pub fn new(layer_index: u32, group_index: u32, maps: Tensor) -> Result<Self, TensorError> {
        maps.dims3()?;
        Ok(Self {
            layer_index,
            group_index,
            maps,
        })
    }

    pub fn channels(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.maps.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.maps.shape()[2]
    }
}

/// Checks the structural invariants of a full set of layer activations
/// against `topology`: one entry per layer in order, declared channel
/// counts, shared spatial size within a group, non-increasing size across groups.
pub fn check_activations(topology: &NetworkTopology, acts: &[LayerActivations]) -> Result<(), ModelError> {
    if acts.len() != topology.layers.len() {
        return Err(ModelError::TopologyMismatch {
            layer: String::new(),
            reason: format!("expected {} layers, got {}", topology.layers.len(), acts.len()),
        });
    }
    let mut prev: Option<(u32, usize, usize)> = None;
    for (spec, act) in topology.layers.iter().zip(acts) {
        let mismatch = |reason: String| ModelError::TopologyMismatch {
            layer: spec.name.clone(),
            reason,
        };
        if act.layer_index != spec.index || act.group_index != spec.group {
            return Err(mismatch(format!(
                "activation tagged layer {} group {}, expected layer {} group {}",
                act.layer_index, act.group_index, spec.index, spec.group
            )));
        }
        if act.channels() != spec.channels {
            return Err(mismatch(format!(
                "{} channels, topology declares {}",
                act.channels(),
                spec.channels
            )));
        }
        let (h, w) = (act.height(), act.width());
        if let Some((g, ph, pw)) = prev {
            if g == spec.group && (h, w) != (ph, pw) {
                return Err(mismatch(format!(
                    "spatial size {h}x{w} differs from {ph}x{pw} within group {g}"
                )));
            }
            if h > ph || w > pw {
                return Err(mismatch(format!("spatial size {h}x{w} grows after {ph}x{pw}")));
            }
        }
        prev = Some((spec.group, h, w));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    net: Arc<ConvNet>,
    topology: NetworkTopology,
    taps: Vec<String>,
}

/// Load an ONNX backbone and bind it to `topology`.
pub fn load_model(path: impl AsRef<Path>, topology: &NetworkTopology) -> Result<FeatureExtractor, ModelError> {
    FeatureExtractor::load(path, topology)
}

pub fn extract_features(
    extractor: &FeatureExtractor,
    image: &Tensor,
    working_size: (usize, usize),
) -> Result<Vec<LayerActivations>, ModelError> {
    extractor.extract(image, working_size)
}

impl FeatureExtractor {
    pub fn load(path: impl AsRef<Path>, topology: &NetworkTopology) -> Result<Self, ModelError> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(ModelError::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)?;
        let model = ModelProto::decode_bytes(&bytes).map_err(|e| ModelError::Decode(e.to_string()))?;
        Self::from_onnx(&model, topology)
    }

    pub fn from_onnx(model: &ModelProto, topology: &NetworkTopology) -> Result<Self, ModelError> {
        let (net, unsupported) = ConvNet::from_onnx(model)?;
        Self::bind(net, &unsupported, topology)
    }

    pub fn from_net(net: ConvNet, topology: &NetworkTopology) -> Result<Self, ModelError> {
        Self::bind(net, &[], topology)
    }

    fn bind(net: ConvNet, unsupported: &[UnsupportedNode], topology: &NetworkTopology) -> Result<Self, ModelError> {
        topology.validate()?;
        let taps = topology
            .layers
            .iter()
            .map(|spec| resolve_tap(&net, unsupported, spec))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            net: Arc::new(net),
            topology: topology.clone(),
            taps,
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    /// Tensor names tapped for each topology layer, in topology order.
    pub fn taps(&self) -> &[String] {
        &self.taps
    }

    /// Resize to `working_size` `(width, height)`, condition, run the backbone,
    /// and return one [`LayerActivations`] per topology layer.
    pub fn extract(&self, image: &Tensor, working_size: (usize, usize)) -> Result<Vec<LayerActivations>, ModelError> {
        let input = self.prepare_input(image, working_size)?;
        let mut outputs = self.net.forward(input, &self.taps)?;
        let acts = self
            .topology
            .layers
            .iter()
            .zip(&self.taps)
            .map(|(spec, tap)| {
                let maps = outputs
                    .remove(tap)
                    .ok_or_else(|| ModelError::Inference(format!("tap {tap:?} produced no value")))?;
                Ok(LayerActivations::new(spec.index, spec.group, maps)?)
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        check_activations(&self.topology, &acts)?;
        for a in &acts {
            a.maps
                .ensure_finite()
                .map_err(|_| ModelError::Inference(format!("layer {} produced non-finite values", a.layer_index)))?;
        }
        Ok(acts)
    }

    /// The conditioned `[3, h, w]` network input for `image`.
    pub fn prepare_input(&self, image: &Tensor, working_size: (usize, usize)) -> Result<Tensor, ModelError> {
        let (c, _, _) = image.dims3().map_err(|_| ModelError::NotRgb(image.shape().to_vec()))?;
        if c != 3 {
            return Err(ModelError::NotRgb(image.shape().to_vec()));
        }
        let (w, h) = working_size;
        if w == 0 || h == 0 {
            return Err(ModelError::BadWorkingSize(w, h));
        }
        image.ensure_finite()?;
        let resized = resize_bilinear_chw(image, w, h)?;
        Ok(preprocess(&resized, &self.topology.preprocess))
    }
}

/// Apply `p` to an RGB `[3, H, W]` tensor with values in `[0, 1]`.
pub fn preprocess(rgb: &Tensor, p: &Preprocess) -> Tensor {
    let plane = rgb.len() / 3;
    let mut out = vec![0.0f32; rgb.len()];
    for mc in 0..3 {
        let src = match p.channel_order {
            ChannelOrder::Rgb => mc,
            ChannelOrder::Bgr => 2 - mc,
        };
        let (mean, std) = (p.mean[mc], p.std[mc]);
        for (o, &v) in out[mc * plane..(mc + 1) * plane]
            .iter_mut()
            .zip(&rgb.data()[src * plane..(src + 1) * plane])
        {
            *o = (v * 255.0 * p.scale - mean) / std;
        }
    }
    Tensor::new(rgb.shape().to_vec(), out).expect("same shape")
}

fn resolve_tap(net: &ConvNet, unsupported: &[UnsupportedNode], spec: &ConvLayerSpec) -> Result<String, ModelError> {
    let mismatch = |reason: String| ModelError::TopologyMismatch {
        layer: spec.name.clone(),
        reason,
    };
    let tap = if let Some(node) = net.find_node(&spec.name) {
        let mut consumers = net.consumers_of(&node.output);
        match (&node.op, consumers.next(), consumers.next()) {
            (Op::Conv(_), Some(relu), None) if relu.op == Op::Relu => relu.output.clone(),
            _ => node.output.clone(),
        }
    } else if net.producer_of(&spec.name).is_some() {
        spec.name.clone()
    } else if let Some(u) = unsupported
        .iter()
        .find(|u| u.name == spec.name || u.outputs.contains(&spec.name))
    {
        return Err(ModelError::UnsupportedOperator {
            node: u.name.clone(),
            op_type: u.op_type.clone(),
            reason: u.reason.clone(),
        });
    } else {
        return Err(mismatch("no node or tensor with this name in the model".into()));
    };

    // Walk back to the producing convolution through element-wise ops only,
    // so pooled tensors are never tapped.
    let mut cursor = tap.as_str();
    let conv = loop {
        let Some(node) = net.producer_of(cursor) else {
            if let Some(u) = unsupported.iter().find(|u| u.outputs.iter().any(|o| o == cursor)) {
                return Err(ModelError::UnsupportedOperator {
                    node: u.name.clone(),
                    op_type: u.op_type.clone(),
                    reason: u.reason.clone(),
                });
            }
            return Err(mismatch(format!("tensor {cursor:?} is not produced by a convolution")));
        };
        match &node.op {
            Op::Conv(c) => break c,
            Op::Relu | Op::Identity => cursor = &node.input,
            Op::MaxPool(_) => return Err(mismatch("tapped tensor is a pooling output".into())),
        }
    };
    if conv.out_channels != spec.channels {
        return Err(mismatch(format!(
            "model layer has {} channels, topology declares {}",
            conv.out_channels, spec.channels
        )));
    }
    // Every node upstream of the tap must be executable.
    let mut cursor = tap.as_str();
    while cursor != net.input_name {
        match net.producer_of(cursor) {
            Some(n) => cursor = &n.input,
            None => {
                return Err(
                    match unsupported.iter().find(|u| u.outputs.iter().any(|o| o == cursor)) {
                        Some(u) => ModelError::UnsupportedOperator {
                            node: u.name.clone(),
                            op_type: u.op_type.clone(),
                            reason: u.reason.clone(),
                        },
                        None => mismatch(format!("tensor {cursor:?} is not connected to the model input")),
                    },
                )
            }
        }
    }
    Ok(tap)
}
