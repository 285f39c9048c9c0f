//! Singleton-search measures over target / distractor / background regions.

use serde::{Deserialize, Serialize};

use super::{MetricError, RegionMasks, EPSILON};
use crate::tensor::Tensor;

/// Default inhibition-of-return radius as a fraction of the image diagonal.
pub const DEFAULT_IOR_FRACTION: f64 = 0.07;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Msr {
    /// Target max over distractor max; `None` without a distractor mask.
    pub msr_t: Option<f64>,
    /// Background max over target max; `None` when there is no background.
    pub msr_b: Option<f64>,
}

fn region_max(sal: &Tensor, mask: &[bool]) -> Option<f64> {
    sal.data()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v as f64)
        .reduce(f64::max)
}

fn region_mean(sal: &Tensor, mask: &[bool]) -> Option<f64> {
    let (sum, n) = sal
        .data()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v as f64, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn msr(sal: &Tensor, masks: &RegionMasks) -> Result<Msr, MetricError> {
    masks.check_shape(sal)?;
    let t = region_max(sal, &masks.target).ok_or(MetricError::EmptyRegion("target"))?;
    let msr_t = match &masks.distractors {
        Some(d) => Some(
            t / region_max(sal, d)
                .ok_or(MetricError::EmptyRegion("distractors"))?
                .max(EPSILON),
        ),
        None => None,
    };
    let msr_b = region_max(sal, &masks.background()).map(|b| b / t.max(EPSILON));
    Ok(Msr { msr_t, msr_b })
}

/// Global saliency index `(mean_t − mean_d) / (mean_t + mean_d)`.
pub fn gsi(sal: &Tensor, masks: &RegionMasks) -> Result<f64, MetricError> {
    masks.check_shape(sal)?;
    let d = masks
        .distractors
        .as_ref()
        .ok_or(MetricError::EmptyRegion("distractors"))?;
    let mt = region_mean(sal, &masks.target).ok_or(MetricError::EmptyRegion("target"))?;
    let md = region_mean(sal, d).ok_or(MetricError::EmptyRegion("distractors"))?;
    if mt + md == 0.0 {
        return Ok(0.0);
    }
    Ok((mt - md) / (mt + md))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanpathConfig {
    pub budget: usize,
    /// Inhibition-of-return radius in pixels; `None` is 7% of the diagonal.
    pub ior_radius: Option<f64>,
    /// Grow the target mask by this many pixels before the hit test.
    pub target_dilation: usize,
}

impl Default for ScanpathConfig {
    fn default() -> Self {
        Self {
            budget: 100,
            ior_radius: None,
            target_dilation: 0,
        }
    }
}

impl ScanpathConfig {
    pub fn radius_for(&self, width: usize, height: usize) -> f64 {
        self.ior_radius
            .unwrap_or_else(|| DEFAULT_IOR_FRACTION * ((width * width + height * height) as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanpathResult {
    /// 1-based fixation count at which the target was hit.
    pub fixations_to_target: Option<usize>,
    /// Fixations as `(x, y)`.
    pub path: Vec<(usize, usize)>,
    pub budget: usize,
}

impl ScanpathResult {
    pub fn found(&self) -> bool {
        self.fixations_to_target.is_some()
    }
}

fn dilate(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    if r == 0 {
        return mask.to_vec();
    }
    let r2 = (r * r) as isize;
    let ri = r as isize;
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if dx * dx + dy * dy <= r2 && nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                        out[ny as usize * w + nx as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// Greedy winner-take-all scan with inhibition of return.
pub fn scanpath(sal: &Tensor, masks: &RegionMasks, cfg: &ScanpathConfig) -> Result<ScanpathResult, MetricError> {
    masks.check_shape(sal)?;
    let (h, w) = (masks.height, masks.width);
    if cfg.budget == 0 {
        return Err(MetricError::InvalidParameter("budget must be at least 1".into()));
    }
    let radius = cfg.radius_for(w, h);
    if !(radius.is_finite() && radius > 0.0) {
        return Err(MetricError::InvalidParameter("ior radius must be positive".into()));
    }
    let target = dilate(&masks.target, w, h, cfg.target_dilation);
    let mut work: Vec<f64> = sal.data().iter().map(|&v| v as f64).collect();
    let mut path = Vec::new();
    let reach = radius.floor() as isize;
    let r2 = radius * radius;
    for k in 1..=cfg.budget {
        // First occurrence wins ties.
        let (best, &value) =
            work.iter().enumerate().fold(
                (0, &f64::NEG_INFINITY),
                |acc, cur| if *cur.1 > *acc.1 { cur } else { acc },
            );
        if value == f64::NEG_INFINITY {
            break;
        }
        let (x, y) = (best % w, best / w);
        path.push((x, y));
        if target[best] {
            return Ok(ScanpathResult {
                fixations_to_target: Some(k),
                path,
                budget: cfg.budget,
            });
        }
        for dy in -reach..=reach {
            let ny = y as isize + dy;
            if ny < 0 || ny >= h as isize {
                continue;
            }
            for dx in -reach..=reach {
                let nx = x as isize + dx;
                if nx < 0 || nx >= w as isize || ((dx * dx + dy * dy) as f64) > r2 {
                    continue;
                }
                work[ny as usize * w + nx as usize] = f64::NEG_INFINITY;
            }
        }
    }
    Ok(ScanpathResult {
        fixations_to_target: None,
        path,
        budget: cfg.budget,
    })
}

/// Fraction of results whose target was hit within each budget.
pub fn found_vs_budget_curve(found_at: &[Option<usize>], budgets: &[usize]) -> Vec<(usize, f64)> {
    budgets
        .iter()
        .map(|&b| {
            let hits = found_at.iter().filter(|f| matches!(f, Some(k) if *k <= b)).count();
            let frac = if found_at.is_empty() {
                0.0
            } else {
                hits as f64 / found_at.len() as f64
            };
            (b, frac)
        })
        .collect()
}

/// Mean fixation count, counting a miss as the full budget.
pub fn mean_fixations(results: &[ScanpathResult]) -> Option<f64> {
    if results.is_empty() {
        return None;
    }
    let total: usize = results.iter().map(|r| r.fixations_to_target.unwrap_or(r.budget)).sum();
    Some(total as f64 / results.len() as f64)
}
