//! Hierarchical fusion of rarity maps into conspicuity maps and the final
//! saliency map.
//!
//! Channel rarity maps of a layer fuse into a layer conspicuity map, layer
//! maps of a group fuse into a group conspicuity map, and the group maps sum
//! (with increasing weight for deeper groups) into the saliency map. Every
//! fusion stage weights its inputs by the Itti promotion `(max − mean)²`,
//! which favours maps with a few isolated peaks over maps with many.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{LayerActivations, NetworkTopology};
use crate::imageops::{gaussian_blur, minmax_normalize, resize_bilinear};
use crate::rarity::{rarity_of_slice, RarityError};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("cannot fuse maps of shapes {0:?} and {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("{maps} maps but {weights} weights")]
    WeightCount { maps: usize, weights: usize },
    #[error("nothing to fuse")]
    NoMaps,
    #[error("missing conspicuity map for group {0}")]
    MissingGroup(u32),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("face layer {0} not present in the activations")]
    MissingFaceLayer(u32),
    #[error(transparent)]
    Rarity(#[from] RarityError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Layer,
    Group,
    Final,
}

/// A `[H, W]` map in `[0, 1]` produced at one fusion stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ConspicuityMap {
    pub values: Tensor,
    pub level: Level,
    /// Layer index for [`Level::Layer`], group index for [`Level::Group`].
    pub index: u32,
}

/// Final single-channel saliency, normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap(pub Tensor);

impl SaliencyMap {
    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn into_inner(self) -> Tensor {
        self.0
    }
}

impl std::ops::Deref for SaliencyMap {
    type Target = Tensor;
    fn deref(&self) -> &Tensor {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// One non-negative weight per group, normalized to sum 1 before use.
    pub group_weights: Vec<f64>,
    pub face_gain: f64,
    pub face_enabled: bool,
    /// `(width, height)` at which group maps are combined; `None` uses the
    /// largest group map (the working resolution for VGG-style backbones).
    pub common_size: Option<(usize, usize)>,
    /// Blur in pixels at the common size; `None` is 4% of its larger side.
    pub blur_sigma: Option<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            group_weights: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            face_gain: 1.0,
            face_enabled: true,
            common_size: None,
            blur_sigma: None,
        }
    }
}

pub const DEFAULT_BLUR_FRACTION: f64 = 0.04;

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: &str| Err(FusionError::InvalidConfig(m.to_string()));
        if self.group_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("group weights must be finite and non-negative");
        }
        if self.group_weights.iter().all(|&w| w == 0.0) {
            return bad("group weights must not all be zero");
        }
        if let Some(s) = self.blur_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return bad("blur sigma must be finite and non-negative");
            }
        }
        if !self.face_gain.is_finite() {
            return bad("face gain must be finite");
        }
        if let Some((w, h)) = self.common_size {
            if w == 0 || h == 0 {
                return bad("common size must be positive");
            }
        }
        Ok(())
    }

    pub fn normalized_group_weights(&self) -> Vec<f64> {
        let total: f64 = self.group_weights.iter().sum();
        self.group_weights.iter().map(|w| w / total).collect()
    }

    pub fn blur_sigma_for(&self, (w, h): (usize, usize)) -> f64 {
        self.blur_sigma.unwrap_or(DEFAULT_BLUR_FRACTION * w.max(h) as f64)
    }
}

/// `(max − mean)²` of a map.
pub fn itti_weight(map: &Tensor) -> f64 {
    itti_weight_slice(map.data())
}

fn itti_weight_slice(values: &[f32]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0f64;
    for &v in values {
        let v = v as f64;
        max = max.max(v);
        sum += v;
    }
    let d = max - sum / values.len() as f64;
    d * d
}

/// Running weighted sum of min-max normalized maps.
struct Accumulator {
    shape: Vec<usize>,
    acc: Vec<f64>,
}

impl Accumulator {
    fn new(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            acc: vec![0.0; shape.iter().product()],
        }
    }

    fn add(&mut self, values: &[f32], weight: f64) {
        if weight == 0.0 {
            return;
        }
        let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if !(hi > lo) {
            return;
        }
        let (lo, range) = (lo as f64, (hi - lo) as f64);
        for (a, &v) in self.acc.iter_mut().zip(values) {
            *a += weight * ((v as f64 - lo) / range);
        }
    }

    /// The sum, min-max normalized to `[0, 1]`.
    fn finish(self) -> Tensor {
        let (lo, hi) = self
            .acc
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let data = if hi > lo {
            self.acc.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
        } else {
            vec![0.0; self.acc.len()]
        };
        Tensor::new(self.shape, data).expect("accumulator shape")
    }
}

/// Normalize each map to `[0, 1]`, scale by its weight, sum, and renormalize.
pub fn fuse_weighted(maps: &[&Tensor], weights: &[f64]) -> Result<Tensor, FusionError> {
    let first = maps.first().ok_or(FusionError::NoMaps)?;
    if maps.len() != weights.len() {
        return Err(FusionError::WeightCount {
            maps: maps.len(),
            weights: weights.len(),
        });
    }
    let mut acc = Accumulator::new(first.shape());
    for (m, &w) in maps.iter().zip(weights) {
        if m.shape() != first.shape() {
            return Err(FusionError::ShapeMismatch(first.shape().to_vec(), m.shape().to_vec()));
        }
        acc.add(m.data(), w);
    }
    Ok(acc.finish())
}

/// Layer conspicuity map: rarity of every channel, fused with Itti weights.
pub fn layer_conspicuity(layer: &LayerActivations, bin_count: usize) -> Result<ConspicuityMap, FusionError> {
    let (c, h, w) = layer.maps.dims3()?;
    let scored: Vec<(Vec<f32>, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut rarity = vec![0.0f32; h * w];
            rarity_of_slice(layer.maps.channel(ch), bin_count, &mut rarity)?;
            let weight = itti_weight_slice(&rarity);
            Ok((rarity, weight))
        })
        .collect::<Result<_, RarityError>>()?;
    let mut acc = Accumulator::new(&[h, w]);
    for (rarity, weight) in &scored {
        acc.add(rarity, *weight);
    }
    Ok(ConspicuityMap {
        values: acc.finish(),
        level: Level::Layer,
        index: layer.layer_index,
    })
}

/// Group conspicuity map: the group's layer maps fused with Itti weights.
pub fn group_conspicuity(group_index: u32, dlcms: &[ConspicuityMap]) -> Result<ConspicuityMap, FusionError> {
    let maps: Vec<&Tensor> = dlcms.iter().map(|m| &m.values).collect();
    let weights: Vec<f64> = maps.iter().map(|m| itti_weight(m)).collect();
    Ok(ConspicuityMap {
        values: fuse_weighted(&maps, &weights)?,
        level: Level::Group,
        index: group_index,
    })
}

/// Combine group maps (indexed 1..=n in order) into the saliency map at
/// `out_size` `(width, height)`.
pub fn final_saliency(
    dgcms: &[ConspicuityMap],
    face_map: Option<&Tensor>,
    cfg: &FusionConfig,
    out_size: (usize, usize),
) -> Result<SaliencyMap, FusionError> {
    cfg.validate()?;
    let groups = cfg.group_weights.len();
    for g in 1..=groups as u32 {
        if !dgcms.iter().any(|m| m.index == g) {
            return Err(FusionError::MissingGroup(g));
        }
    }
    if dgcms.len() != groups {
        return Err(FusionError::InvalidConfig(format!(
            "{} group maps but {groups} group weights",
            dgcms.len()
        )));
    }
    let common = cfg.common_size.unwrap_or_else(|| {
        dgcms
            .iter()
            .map(|m| (m.values.shape()[1], m.values.shape()[0]))
            .max_by_key(|&(w, h)| w * h)
            .expect("at least one group")
    });
    let weights = cfg.normalized_group_weights();
    let mut sum = vec![0.0f64; common.0 * common.1];
    for m in dgcms {
        let wgt = weights[m.index as usize - 1];
        if wgt == 0.0 {
            continue;
        }
        let resized = resize_bilinear(&m.values, common.0, common.1)?;
        for (s, &v) in sum.iter_mut().zip(resized.data()) {
            *s += wgt * v as f64;
        }
    }
    if let (true, Some(face)) = (cfg.face_enabled, face_map) {
        let face = resize_bilinear(&minmax_normalize(face), common.0, common.1)?;
        for (s, &v) in sum.iter_mut().zip(face.data()) {
            *s += cfg.face_gain * v as f64;
        }
    }
    let combined = Tensor::new(vec![common.1, common.0], sum.into_iter().map(|v| v as f32).collect())?;
    let blurred = gaussian_blur(&combined, cfg.blur_sigma_for(common))?;
    let normalized = minmax_normalize(&blurred);
    let resized = resize_bilinear(&normalized, out_size.0, out_size.1)?;
    Ok(SaliencyMap(minmax_normalize(&resized)))
}

/// Every intermediate and the final map of one saliency computation.
#[derive(Clone, Debug)]
pub struct SaliencyBreakdown {
    pub layers: Vec<ConspicuityMap>,
    pub groups: Vec<ConspicuityMap>,
    pub saliency: SaliencyMap,
}

/// The full rarity + fusion pipeline over precomputed activations.
#[derive(Clone, Debug)]
pub struct SaliencyEngine {
    pub topology: NetworkTopology,
    pub fusion: FusionConfig,
    pub bin_count: usize,
}

impl SaliencyEngine {
    pub fn new(topology: NetworkTopology, fusion: FusionConfig, bin_count: usize) -> Result<Self, FusionError> {
        fusion.validate()?;
        if bin_count == 0 {
            return Err(RarityError::ZeroBins.into());
        }
        let groups = topology.groups().len();
        if fusion.group_weights.len() != groups {
            return Err(FusionError::InvalidConfig(format!(
                "{} group weights for a topology with {groups} groups",
                fusion.group_weights.len()
            )));
        }
        Ok(Self {
            topology,
            fusion,
            bin_count,
        })
    }

    pub fn compute(
        &self,
        acts: &[LayerActivations],
        out_size: (usize, usize),
    ) -> Result<SaliencyBreakdown, FusionError> {
        let layers = acts
            .iter()
            .map(|a| layer_conspicuity(a, self.bin_count))
            .collect::<Result<Vec<_>, _>>()?;
        let mut groups = Vec::new();
        for g in self.topology.groups() {
            let members: Vec<ConspicuityMap> = acts
                .iter()
                .zip(&layers)
                .filter(|(a, _)| a.group_index == g)
                .map(|(_, m)| m.clone())
                .collect();
            if members.is_empty() {
                return Err(FusionError::MissingGroup(g));
            }
            groups.push(group_conspicuity(g, &members)?);
        }
        let face = match (self.fusion.face_enabled, self.topology.face_channel) {
            (true, Some(fc)) => {
                let layer = acts
                    .iter()
                    .find(|a| a.layer_index == fc.layer)
                    .ok_or(FusionError::MissingFaceLayer(fc.layer))?;
                Some(layer.maps.channel_map(fc.channel)?)
            }
            _ => None,
        };
        let saliency = final_saliency(&groups, face.as_ref(), &self.fusion, out_size)?;
        Ok(SaliencyBreakdown {
            layers,
            groups,
            saliency,
        })
    }
}
