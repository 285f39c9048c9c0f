use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// One convolutional layer that contributes activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    /// Position in the backbone counting pooling layers too (VGG16: 1, 2, 4, 5, 7, ...).
    pub index: u32,
    pub group: u32,
    /// Name of the `Conv` node in the model graph, or of the tensor to tap.
    pub name: String,
    pub channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Input conditioning: `x = (v·255·scale − mean) / std` per channel, with
/// `v ∈ [0, 1]` and the channels arranged in `channel_order`.
/// `mean` and `std` are listed in model channel order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub channel_order: ChannelOrder,
    pub scale: f32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Preprocess {
    /// Caffe-style VGG16 conditioning (the Keras `vgg16.preprocess_input` convention).
    pub fn caffe_bgr() -> Self {
        Self {
            channel_order: ChannelOrder::Bgr,
            scale: 1.0,
            mean: [103.939, 116.779, 123.68],
            std: [1.0; 3],
        }
    }

    /// torchvision ImageNet conditioning.
    pub fn torchvision() -> Self {
        Self {
            channel_order: ChannelOrder::Rgb,
            scale: 1.0 / 255.0,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Channel of one layer that responds to faces. `channel` is 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceChannel {
    pub layer: u32,
    pub channel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub name: String,
    pub layers: Vec<ConvLayerSpec>,
    #[serde(default)]
    pub face_channel: Option<FaceChannel>,
    /// Default working resolution `(width, height)`.
    pub input_size: (usize, usize),
    pub preprocess: Preprocess,
}

const VGG16_LAYERS: [(u32, u32, &str, usize); 13] = [
    (1, 1, "block1_conv1", 64),
    (2, 1, "block1_conv2", 64),
    (4, 2, "block2_conv1", 128),
    (5, 2, "block2_conv2", 128),
    (7, 3, "block3_conv1", 256),
    (8, 3, "block3_conv2", 256),
    (9, 3, "block3_conv3", 256),
    (11, 4, "block4_conv1", 512),
    (12, 4, "block4_conv2", 512),
    (13, 4, "block4_conv3", 512),
    (15, 5, "block5_conv1", 512),
    (16, 5, "block5_conv2", 512),
    (17, 5, "block5_conv3", 512),
];

pub const BUILTIN_TOPOLOGIES: [&str; 2] = ["vgg16", "vgg16-reference"];

impl NetworkTopology {
    /// ImageNet VGG16 with Keras-style layer names and the layer-15 face unit.
    pub fn vgg16() -> Self {
        Self {
            name: "vgg16".into(),
            layers: VGG16_LAYERS
                .iter()
                .map(|&(index, group, name, channels)| ConvLayerSpec {
                    index,
                    group,
                    name: name.into(),
                    channels,
                })
                .collect(),
            face_channel: Some(FaceChannel {
                layer: 15,
                channel: 105,
            }),
            input_size: (224, 224),
            preprocess: Preprocess::caffe_bgr(),
        }
    }

    /// VGG16 layout for the seeded reference backbone, which has no face unit.
    pub fn vgg16_reference() -> Self {
        Self {
            name: "vgg16-reference".into(),
            face_channel: None,
            preprocess: Preprocess {
                channel_order: ChannelOrder::Rgb,
                scale: 1.0 / 255.0,
                mean: [0.5; 3],
                std: [0.25; 3],
            },
            ..Self::vgg16()
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "vgg16" => Some(Self::vgg16()),
            "vgg16-reference" => Some(Self::vgg16_reference()),
            _ => None,
        }
    }

    /// A built-in name, or a path to a topology JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self, ModelError> {
        if let Some(t) = Self::builtin(name_or_path) {
            return Ok(t);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(ModelError::UnknownTopology(name_or_path.to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        let topo: Self = serde_json::from_str(&text)
            .map_err(|e| ModelError::Malformed(format!("topology {}: {e}", path.display())))?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn conv_layer_indices(&self) -> Vec<u32> {
        self.layers.iter().map(|l| l.index).collect()
    }

    pub fn group_of_layer(&self) -> BTreeMap<u32, u32> {
        self.layers.iter().map(|l| (l.index, l.group)).collect()
    }

    pub fn layer(&self, index: u32) -> Option<&ConvLayerSpec> {
        self.layers.iter().find(|l| l.index == index)
    }

    /// Distinct group ids in ascending order.
    pub fn groups(&self) -> Vec<u32> {
        let mut g: Vec<u32> = self.layers.iter().map(|l| l.group).collect();
        g.dedup();
        g
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidTopology(msg));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        for pair in self.layers.windows(2) {
            if pair[1].index <= pair[0].index {
                return bad(format!(
                    "layer indices must increase ({} then {})",
                    pair[0].index, pair[1].index
                ));
            }
            if pair[1].group < pair[0].group || pair[1].group > pair[0].group + 1 {
                return bad(format!(
                    "groups must be contiguous runs numbered consecutively (layer {} group {} after group {})",
                    pair[1].index, pair[1].group, pair[0].group
                ));
            }
        }
        if self.layers[0].group != 1 {
            return bad("group numbering must start at 1".into());
        }
        if let Some(l) = self.layers.iter().find(|l| l.channels == 0) {
            return bad(format!("layer {} has zero channels", l.index));
        }
        if let Some(face) = self.face_channel {
            match self.layer(face.layer) {
                None => return bad(format!("face channel references unknown layer {}", face.layer)),
                Some(l) if face.channel >= l.channels => {
                    return bad(format!(
                        "face channel {} out of range for layer {} with {} channels",
                        face.channel, l.index, l.channels
                    ))
                }
                _ => {}
            }
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return bad("input size must be positive".into());
        }
        Ok(())
    }
}
