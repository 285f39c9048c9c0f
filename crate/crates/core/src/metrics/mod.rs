//! Saliency evaluation: fixation-based scores (AUC-Judd, AUC-Borji, NSS),
//! distribution scores against a density map (CC, KL, SIM), singleton-search
//! scores against region masks (MSR, GSI, scanpath) and report aggregation.

mod report;
mod search;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use report::{
    evaluate, gsi_vs_difference, Aggregates, CsvRow, EvalReport, GroundTruth, GsiPoint, MetricConfig, MetricOutcome,
    StimulusReport, METRIC_NAMES,
};
pub use search::{
    found_vs_budget_curve, gsi, mean_fixations, msr, scanpath, Msr, ScanpathConfig, ScanpathResult,
    DEFAULT_IOR_FRACTION,
};

/// Regularizer added before normalizing distributions and used as the floor
/// of ratio denominators.
pub const EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("fixation set is empty")]
    NoFixations,
    #[error("fixation ({x}, {y}) outside a {width}x{height} map")]
    FixationOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: &'static str },
    #[error("region {0} is empty")]
    EmptyRegion(&'static str),
    #[error("target and distractor masks overlap")]
    OverlappingMasks,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Fixated pixels as `(x, y)` with the origin top-left.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixationSet {
    pub points: Vec<(usize, usize)>,
}

impl FixationSet {
    pub fn new(points: Vec<(usize, usize)>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<(), MetricError> {
        match self.points.iter().find(|&&(x, y)| x >= width || y >= height) {
            Some(&(x, y)) => Err(MetricError::FixationOutOfBounds { x, y, width, height }),
            None => Ok(()),
        }
    }

    /// Sorted, de-duplicated row-major indices of the fixated pixels.
    pub fn pixel_indices(&self, width: usize, height: usize) -> Result<Vec<usize>, MetricError> {
        if self.points.is_empty() {
            return Err(MetricError::NoFixations);
        }
        self.check_bounds(width, height)?;
        let mut idx: Vec<usize> = self.points.iter().map(|&(x, y)| y * width + x).collect();
        idx.sort_unstable();
        idx.dedup();
        Ok(idx)
    }
}

/// Target / distractor partition of a stimulus. Pixels in neither mask are background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMasks {
    pub width: usize,
    pub height: usize,
    pub target: Vec<bool>,
    pub distractors: Option<Vec<bool>>,
}

impl RegionMasks {
    pub fn new(
        width: usize,
        height: usize,
        target: Vec<bool>,
        distractors: Option<Vec<bool>>,
    ) -> Result<Self, MetricError> {
        let n = width * height;
        if target.len() != n {
            return Err(MetricError::ShapeMismatch(vec![height, width], vec![target.len()]));
        }
        if !target.iter().any(|&t| t) {
            return Err(MetricError::EmptyRegion("target"));
        }
        if let Some(d) = &distractors {
            if d.len() != n {
                return Err(MetricError::ShapeMismatch(vec![height, width], vec![d.len()]));
            }
            if target.iter().zip(d).any(|(&t, &d)| t && d) {
                return Err(MetricError::OverlappingMasks);
            }
        }
        Ok(Self {
            width,
            height,
            target,
            distractors,
        })
    }

    /// Masks from `[H, W]` tensors; nonzero means membership.
    pub fn from_tensors(target: &Tensor, distractors: Option<&Tensor>) -> Result<Self, MetricError> {
        let (h, w) = target.dims2()?;
        let bits = |t: &Tensor| -> Result<Vec<bool>, MetricError> {
            if t.shape() != target.shape() {
                return Err(MetricError::ShapeMismatch(target.shape().to_vec(), t.shape().to_vec()));
            }
            Ok(t.data().iter().map(|&v| v != 0.0).collect())
        };
        Self::new(w, h, bits(target)?, distractors.map(bits).transpose()?)
    }

    pub fn background(&self) -> Vec<bool> {
        match &self.distractors {
            Some(d) => self.target.iter().zip(d).map(|(&t, &d)| !t && !d).collect(),
            None => self.target.iter().map(|&t| !t).collect(),
        }
    }

    pub fn target_tensor(&self) -> Tensor {
        mask_tensor(self.height, self.width, &self.target)
    }

    pub fn distractor_tensor(&self) -> Option<Tensor> {
        self.distractors
            .as_ref()
            .map(|d| mask_tensor(self.height, self.width, d))
    }

    pub fn check_shape(&self, sal: &Tensor) -> Result<(), MetricError> {
        let (h, w) = sal.dims2()?;
        if (h, w) != (self.height, self.width) {
            return Err(MetricError::ShapeMismatch(
                sal.shape().to_vec(),
                vec![self.height, self.width],
            ));
        }
        Ok(())
    }
}

fn mask_tensor(h: usize, w: usize, bits: &[bool]) -> Tensor {
    Tensor::new(vec![h, w], bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).expect("mask shape")
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<(), MetricError> {
    a.dims2()?;
    if a.shape() != b.shape() {
        return Err(MetricError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    Ok(())
}

fn mean_std(values: &[f32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Normalized scanpath saliency: mean z-score of the map over fixated pixels.
pub fn nss(sal: &Tensor, fix: &FixationSet) -> Result<f64, MetricError> {
    let (h, w) = sal.dims2()?;
    let idx = fix.pixel_indices(w, h)?;
    let (mean, std) = mean_std(sal.data());
    if std == 0.0 {
        return Err(MetricError::Undefined {
            metric: "nss",
            reason: "saliency map is constant",
        });
    }
    let total: f64 = idx.iter().map(|&i| (sal.data()[i] as f64 - mean) / std).sum();
    Ok(total / idx.len() as f64)
}

/// Pearson correlation between the saliency map and a density map.
pub fn cc(sal: &Tensor, density: &Tensor) -> Result<f64, MetricError> {
    check_same_shape(sal, density)?;
    let (ma, sa) = mean_std(sal.data());
    let (mb, sb) = mean_std(density.data());
    if sa == 0.0 || sb == 0.0 {
        return Err(MetricError::Undefined {
            metric: "cc",
            reason: "input has zero variance",
        });
    }
    let cov = sal
        .data()
        .iter()
        .zip(density.data())
        .map(|(&a, &b)| (a as f64 - ma) * (b as f64 - mb))
        .sum::<f64>()
        / sal.len() as f64;
    Ok(cov / (sa * sb))
}

/// `(v + ε) / Σ(v + ε)`.
pub fn to_distribution(map: &Tensor) -> Result<Vec<f64>, MetricError> {
    if map.data().iter().any(|&v| v < 0.0) {
        return Err(MetricError::InvalidParameter(
            "distribution input has negative values".into(),
        ));
    }
    let shifted: Vec<f64> = map.data().iter().map(|&v| v as f64 + EPSILON).collect();
    let total: f64 = shifted.iter().sum();
    Ok(shifted.into_iter().map(|v| v / total).collect())
}

/// `Σ P ln(P / Q)` with `P` the density and `Q` the saliency distribution.
pub fn kl(density: &Tensor, sal: &Tensor) -> Result<f64, MetricError> {
    check_same_shape(density, sal)?;
    let p = to_distribution(density)?;
    let q = to_distribution(sal)?;
    Ok(p.iter().zip(&q).map(|(&p, &q)| p * (p / q).ln()).sum())
}

/// Histogram intersection `Σ min(P, Q)` of the two distributions.
pub fn sim(sal: &Tensor, density: &Tensor) -> Result<f64, MetricError> {
    check_same_shape(sal, density)?;
    let p = to_distribution(sal)?;
    let q = to_distribution(density)?;
    Ok(p.iter().zip(&q).map(|(&a, &b)| a.min(b)).sum())
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// AUC with thresholds at every distinct fixated saliency value. True
/// positives are fixated pixels at or above the threshold; false positives
/// are non-fixated pixels at or above it.
pub fn auc_judd(sal: &Tensor, fix: &FixationSet) -> Result<f64, MetricError> {
    let (h, w) = sal.dims2()?;
    let idx = fix.pixel_indices(w, h)?;
    let n_pix = sal.len();
    let n_fix = idx.len();
    if n_fix == n_pix {
        return Err(MetricError::Undefined {
            metric: "auc_judd",
            reason: "every pixel is fixated",
        });
    }
    let mut fixated: Vec<f64> = idx.iter().map(|&i| sal.data()[i] as f64).collect();
    fixated.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut all: Vec<f64> = sal.data().iter().map(|&v| v as f64).collect();
    all.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut curve = vec![(0.0, 0.0)];
    let (mut fi, mut ai) = (0usize, 0usize);
    while fi < n_fix {
        let t = fixated[fi];
        while fi < n_fix && fixated[fi] >= t {
            fi += 1;
        }
        while ai < n_pix && all[ai] >= t {
            ai += 1;
        }
        let tp = fi as f64 / n_fix as f64;
        let fp = (ai - fi) as f64 / (n_pix - n_fix) as f64;
        curve.push((fp, tp));
    }
    curve.push((1.0, 1.0));
    Ok(trapezoid(&curve))
}

/// Negative pixel indices for each AUC-Borji split: `n_per_split` draws per
/// split, uniform over all `n_pixels` with replacement, from a ChaCha8 stream.
pub fn borji_negative_samples(n_pixels: usize, n_per_split: usize, n_splits: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_splits)
        .map(|_| (0..n_per_split).map(|_| rng.random_range(0..n_pixels)).collect())
        .collect()
}

/// Exact ROC area between two score sets: the probability that a positive
/// outranks a negative, counting ties as one half.
pub fn auc_exact(pos: &[f64], neg: &[f64]) -> f64 {
    let mut neg = neg.to_vec();
    neg.sort_unstable_by(|a, b| a.total_cmp(b));
    let mut wins = 0.0;
    for &p in pos {
        let below = neg.partition_point(|&n| n < p);
        let upto = neg.partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * (upto - below) as f64;
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

/// AUC of fixated pixels against uniformly drawn pixels, averaged over splits.
pub fn auc_borji(sal: &Tensor, fix: &FixationSet, n_splits: usize, seed: u64) -> Result<f64, MetricError> {
    let (h, w) = sal.dims2()?;
    let idx = fix.pixel_indices(w, h)?;
    if n_splits == 0 {
        return Err(MetricError::InvalidParameter("n_splits must be at least 1".into()));
    }
    let pos: Vec<f64> = idx.iter().map(|&i| sal.data()[i] as f64).collect();
    let splits = borji_negative_samples(sal.len(), pos.len(), n_splits, seed);
    let total: f64 = splits
        .iter()
        .map(|s| {
            let neg: Vec<f64> = s.iter().map(|&i| sal.data()[i] as f64).collect();
            auc_exact(&pos, &neg)
        })
        .sum();
    Ok(total / n_splits as f64)
}
