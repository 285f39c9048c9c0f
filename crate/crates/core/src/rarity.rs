//! Per-feature-map rarity: histogram quantization, self-information scoring,
//! and backprojection of the per-bin scores onto the pixels.
//!
//! Each map is quantized over its own `[min, max]` range into `bin_count`
//! uniform bins. A bin occupied by a fraction `p` of the pixels scores
//! `-ln(p)`; every pixel then receives the score of its bin. Pixels whose
//! value is shared by few others come out bright.

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

/// Number of histogram bins used unless configured otherwise.
pub const DEFAULT_BIN_COUNT: usize = 11;

#[derive(Debug, Error)]
pub enum RarityError {
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("histogram is empty (no pixels counted)")]
    EmptyHistogram,
    #[error("bin index {index} out of range for {bins} bins")]
    BinOutOfRange { index: usize, bins: usize },
    #[error("bin index map has {indices} entries but the histogram counted {counted}")]
    CountMismatch { indices: usize, counted: u64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RarityHistogram {
    pub bin_count: usize,
    pub lo: f32,
    pub hi: f32,
    pub counts: Vec<u64>,
    /// Occupancy probability per bin; empty until [`rarity_scores`] runs.
    pub p: Vec<f64>,
    /// `-ln(p)` for occupied bins, 0 for empty ones.
    pub r: Vec<f64>,
}

impl RarityHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Bin assignment of every pixel of an `[H, W]` map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinIndexMap {
    pub height: usize,
    pub width: usize,
    pub indices: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RarityMap {
    pub values: Tensor,
    pub layer_index: Option<u32>,
    pub channel_index: Option<usize>,
}

/// Bin of `v` within `[lo, hi]` split into `bins` equal parts.
///
/// `v == hi` lands in the last bin; a degenerate range puts everything in bin 0.
#[inline]
pub fn bin_of(v: f32, lo: f32, hi: f32, bins: usize) -> usize {
    if !(hi > lo) {
        return 0;
    }
    let pos = ((v as f64 - lo as f64) / (hi as f64 - lo as f64) * bins as f64).floor();
    (pos.max(0.0) as usize).min(bins - 1)
}

pub fn quantize(map: &Tensor, bin_count: usize) -> Result<(BinIndexMap, RarityHistogram), RarityError> {
    if bin_count == 0 {
        return Err(RarityError::ZeroBins);
    }
    let (height, width) = map.dims2()?;
    map.ensure_finite()?;
    let (lo, hi) = map.min_max();
    let mut counts = vec![0u64; bin_count];
    let indices = map
        .data()
        .iter()
        .map(|&v| {
            let b = bin_of(v, lo, hi, bin_count);
            counts[b] += 1;
            b as u32
        })
        .collect();
    Ok((
        BinIndexMap { height, width, indices },
        RarityHistogram {
            bin_count,
            lo,
            hi,
            counts,
            p: Vec::new(),
            r: Vec::new(),
        },
    ))
}

pub fn rarity_scores(mut hist: RarityHistogram) -> Result<RarityHistogram, RarityError> {
    let total = hist.total();
    if total == 0 {
        return Err(RarityError::EmptyHistogram);
    }
    hist.p = hist.counts.iter().map(|&c| c as f64 / total as f64).collect();
    hist.r = hist
        .counts
        .iter()
        .zip(&hist.p)
        .map(|(&c, &p)| if c > 0 { -p.ln() } else { 0.0 })
        .collect();
    Ok(hist)
}

pub fn backproject(bins: &BinIndexMap, hist: &RarityHistogram) -> Result<RarityMap, RarityError> {
    let total = hist.total();
    if bins.indices.len() as u64 != total {
        return Err(RarityError::CountMismatch {
            indices: bins.indices.len(),
            counted: total,
        });
    }
    if hist.r.len() != hist.bin_count {
        return Err(RarityError::EmptyHistogram);
    }
    let lut: Vec<f32> = hist.r.iter().map(|&r| r as f32).collect();
    let data = bins
        .indices
        .iter()
        .map(|&i| {
            lut.get(i as usize).copied().ok_or(RarityError::BinOutOfRange {
                index: i as usize,
                bins: hist.bin_count,
            })
        })
        .collect::<Result<Vec<f32>, _>>()?;
    Ok(RarityMap {
        values: Tensor::new(vec![bins.height, bins.width], data)?,
        layer_index: None,
        channel_index: None,
    })
}

/// Rarity map of one feature map: quantize, score, backproject.
pub fn channel_rarity(map: &Tensor, bin_count: usize) -> Result<RarityMap, RarityError> {
    let (bins, hist) = quantize(map, bin_count)?;
    if hist.lo == hist.hi {
        // Single occupied bin: -ln(1) everywhere.
        return Ok(RarityMap {
            values: Tensor::zeros(map.shape().to_vec()),
            layer_index: None,
            channel_index: None,
        });
    }
    let hist = rarity_scores(hist)?;
    backproject(&bins, &hist)
}

/// Rarity of a flat `h*w` slice, without materializing the bin index map.
///
/// Produces exactly the same values as [`channel_rarity`].
pub fn rarity_of_slice(values: &[f32], bin_count: usize, out: &mut [f32]) -> Result<(), RarityError> {
    if bin_count == 0 {
        return Err(RarityError::ZeroBins);
    }
    debug_assert_eq!(values.len(), out.len());
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite(i).into());
    }
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if lo == hi {
        out.fill(0.0);
        return Ok(());
    }
    let mut counts = vec![0u64; bin_count];
    let mut scratch: Vec<u8>;
    let wide: Vec<u32>;
    // Bin count rarely exceeds 255; keep the index buffer compact when possible.
    if bin_count <= u8::MAX as usize + 1 {
        scratch = Vec::with_capacity(values.len());
        for &v in values {
            let b = bin_of(v, lo, hi, bin_count);
            counts[b] += 1;
            scratch.push(b as u8);
        }
        let lut = rarity_lut(&counts, values.len());
        for (o, &b) in out.iter_mut().zip(&scratch) {
            *o = lut[b as usize];
        }
    } else {
        wide = values
            .iter()
            .map(|&v| {
                let b = bin_of(v, lo, hi, bin_count);
                counts[b] += 1;
                b as u32
            })
            .collect();
        let lut = rarity_lut(&counts, values.len());
        for (o, &b) in out.iter_mut().zip(&wide) {
            *o = lut[b as usize];
        }
    }
    Ok(())
}

fn rarity_lut(counts: &[u64], total: usize) -> Vec<f32> {
    counts
        .iter()
        .map(|&c| {
            if c > 0 {
                let p = c as f64 / total as f64;
                (-p.ln()) as f32
            } else {
                0.0
            }
        })
        .collect()
}
