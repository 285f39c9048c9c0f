//! Singleton search arrays: a grid of identical distractors with one target
//! that differs in exactly one feature.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Stimulus};
use crate::metrics::RegionMasks;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    /// Difference is a hue rotation in degrees, `(0, 180]`.
    Color,
    /// Difference is a bar rotation in degrees, `(0, 90]`.
    Orientation,
    /// Difference is the target/distractor radius ratio, positive and not 1.
    Size,
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Feature::Color => "color",
            Feature::Orientation => "orientation",
            Feature::Size => "size",
        })
    }
}

impl FromStr for Feature {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "color" => Ok(Feature::Color),
            "orientation" => Ok(Feature::Orientation),
            "size" => Ok(Feature::Size),
            other => Err(DatasetError::InvalidSpec(format!(
                "unknown feature {other:?} (color, orientation, size)"
            ))),
        }
    }
}

/// Element drawing parameters, in pixels unless noted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthGeometry {
    pub cell: usize,
    /// Subsamples per pixel side for anti-aliasing.
    pub supersample: usize,
    pub background: f32,
    /// Disc radius for color stimuli.
    pub disc_radius: f64,
    /// Distractor hue in degrees for color stimuli.
    pub distractor_hue: f64,
    pub bar_length: f64,
    pub bar_width: f64,
    /// Distractor bar orientation in degrees from vertical.
    pub bar_orientation: f64,
    /// Distractor disc radius for size stimuli.
    pub size_radius: f64,
    /// Gray level of bars and size discs.
    pub foreground: f32,
}

impl Default for SynthGeometry {
    fn default() -> Self {
        Self {
            cell: 32,
            supersample: 4,
            background: 0.5,
            disc_radius: 9.0,
            distractor_hue: 120.0,
            bar_length: 22.0,
            bar_width: 6.0,
            bar_orientation: 0.0,
            size_radius: 7.0,
            foreground: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub feature: Feature,
    pub difference: f64,
    /// `(rows, cols)`.
    pub grid: (usize, usize),
    /// Position jitter as a fraction of the free space around an element in its cell.
    pub jitter: f64,
    pub seed: u64,
    #[serde(default)]
    pub geometry: SynthGeometry,
}

impl SynthSpec {
    pub fn new(feature: Feature, difference: f64, seed: u64) -> Self {
        Self {
            feature,
            difference,
            grid: (7, 7),
            jitter: 0.5,
            seed,
            geometry: SynthGeometry::default(),
        }
    }

    pub fn id(&self) -> String {
        format!("{}_d{}_s{}", self.feature, self.difference, self.seed)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        let g = &self.geometry;
        let d = self.difference;
        if !d.is_finite() {
            return bad("difference must be finite".into());
        }
        match self.feature {
            Feature::Color if !(d > 0.0 && d <= 180.0) => {
                return bad(format!(
                    "hue difference {d} outside (0, 180]; the target would not differ"
                ))
            }
            Feature::Orientation if !(d > 0.0 && d <= 90.0) => {
                return bad(format!("orientation difference {d} outside (0, 90]"))
            }
            Feature::Size if !(d > 0.0) || d == 1.0 => {
                return bad(format!("size ratio {d} must be positive and differ from 1"))
            }
            _ => {}
        }
        if self.grid.0 < 2 || self.grid.1 < 2 {
            return bad(format!("grid {}x{} smaller than 2x2", self.grid.0, self.grid.1));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 1]", self.jitter));
        }
        if g.cell == 0 || g.supersample == 0 {
            return bad("cell and supersample must be positive".into());
        }
        let (rt, rd) = self.extents();
        for r in [rt, rd] {
            if !(r > 0.0) || 2.0 * r + 2.0 > g.cell as f64 {
                return bad(format!(
                    "element of radius {r:.2} does not fit in a {}-pixel cell",
                    g.cell
                ));
            }
        }
        Ok(())
    }

    /// Bounding radii of the target and distractor elements.
    fn extents(&self) -> (f64, f64) {
        let g = &self.geometry;
        match self.feature {
            Feature::Color => (g.disc_radius, g.disc_radius),
            Feature::Orientation => {
                let r = (g.bar_length * g.bar_length + g.bar_width * g.bar_width).sqrt() / 2.0;
                (r, r)
            }
            Feature::Size => (g.size_radius * self.difference, g.size_radius),
        }
    }

    pub fn canvas_size(&self) -> (usize, usize) {
        (self.grid.1 * self.geometry.cell, self.grid.0 * self.geometry.cell)
    }
}

enum Shape {
    Disc { r: f64 },
    Bar { half_len: f64, half_w: f64, theta: f64 },
}

impl Shape {
    fn contains(&self, dx: f64, dy: f64) -> bool {
        match *self {
            Shape::Disc { r } => dx * dx + dy * dy <= r * r,
            Shape::Bar {
                half_len,
                half_w,
                theta,
            } => {
                let (s, c) = theta.to_radians().sin_cos();
                // Rotate into the bar frame; at theta = 0 the long axis is vertical.
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                u.abs() <= half_w && v.abs() <= half_len
            }
        }
    }
}

/// HSV with full saturation and value to RGB.
fn hue_to_rgb(hue: f64) -> [f32; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r as f32, g as f32, b as f32]
}

fn quantize8(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Render a search array. Deterministic in `spec`; masks hold every pixel
/// an element touches.
pub fn synthesize(spec: &SynthSpec) -> Result<Stimulus, DatasetError> {
    spec.validate()?;
    let g = &spec.geometry;
    let (rows, cols) = spec.grid;
    let (w, h) = spec.canvas_size();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let target_cell = rng.random_range(0..rows * cols);
    let (rt, rd) = spec.extents();

    let mut coverage_rgb = vec![[0.0f32; 3]; w * h];
    let mut coverage = vec![0.0f32; w * h];
    let mut target = vec![false; w * h];
    let mut distractors = vec![false; w * h];
    let s = g.supersample;
    let sub = 1.0 / (s * s) as f32;

    for cell in 0..rows * cols {
        let is_target = cell == target_cell;
        let radius = if is_target { rt } else { rd };
        let margin = g.cell as f64 / 2.0 - radius - 1.0;
        let jx = rng.random_range(-1.0..=1.0) * spec.jitter * margin;
        let jy = rng.random_range(-1.0..=1.0) * spec.jitter * margin;
        let (row, col) = (cell / cols, cell % cols);
        let cx = (col * g.cell) as f64 + g.cell as f64 / 2.0 + jx;
        let cy = (row * g.cell) as f64 + g.cell as f64 / 2.0 + jy;

        let (shape, color) = match spec.feature {
            Feature::Color => {
                let hue = g.distractor_hue + if is_target { spec.difference } else { 0.0 };
                (Shape::Disc { r: g.disc_radius }, hue_to_rgb(hue))
            }
            Feature::Orientation => {
                let theta = g.bar_orientation + if is_target { spec.difference } else { 0.0 };
                (
                    Shape::Bar {
                        half_len: g.bar_length / 2.0,
                        half_w: g.bar_width / 2.0,
                        theta,
                    },
                    [g.foreground; 3],
                )
            }
            Feature::Size => (Shape::Disc { r: radius }, [g.foreground; 3]),
        };

        let x0 = (cx - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as usize).min(w - 1);
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let y1 = ((cy + radius).ceil() as usize).min(h - 1);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let mut hits = 0usize;
                for sy in 0..s {
                    for sx in 0..s {
                        let x = px as f64 + (sx as f64 + 0.5) / s as f64;
                        let y = py as f64 + (sy as f64 + 0.5) / s as f64;
                        if shape.contains(x - cx, y - cy) {
                            hits += 1;
                        }
                    }
                }
                if hits == 0 {
                    continue;
                }
                let c = hits as f32 * sub;
                let i = py * w + px;
                coverage[i] = c;
                for ch in 0..3 {
                    coverage_rgb[i][ch] = color[ch] * c;
                }
                if is_target {
                    target[i] = true;
                } else {
                    distractors[i] = true;
                }
            }
        }
    }

    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for ch in 0..3 {
            data[ch * plane + i] = quantize8(g.background * (1.0 - coverage[i]) + coverage_rgb[i][ch]);
        }
    }
    let image = Tensor::new(vec![3, h, w], data).expect("canvas shape");
    let masks =
        RegionMasks::new(w, h, target, Some(distractors)).map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;

    let attributes = BTreeMap::from([
        ("feature".to_string(), spec.feature.to_string()),
        ("difference".to_string(), spec.difference.to_string()),
        ("grid".to_string(), format!("{}x{}", rows, cols)),
        ("jitter".to_string(), spec.jitter.to_string()),
        ("seed".to_string(), spec.seed.to_string()),
        ("target_cell".to_string(), target_cell.to_string()),
        (
            "geometry".to_string(),
            serde_json::to_string(g).expect("geometry serializes"),
        ),
    ]);
    Ok(Stimulus {
        id: spec.id(),
        image,
        fixations: None,
        density: None,
        masks: Some(masks),
        attributes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// 4-connected components of a mask.
    fn components(mask: &[bool], w: usize, h: usize) -> usize {
        let mut seen = vec![false; mask.len()];
        let mut count = 0;
        for start in 0..mask.len() {
            if !mask[start] || seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                let mut push = |j: usize| {
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    push(i - 1);
                }
                if x + 1 < w {
                    push(i + 1);
                }
                if y > 0 {
                    push(i - w);
                }
                if y + 1 < h {
                    push(i + w);
                }
            }
        }
        count
    }

    #[test]
    fn color_singleton_layout() {
        let s = synthesize(&SynthSpec::new(Feature::Color, 180.0, 1)).unwrap();
        assert_eq!(s.image.shape(), &[3, 224, 224]);
        let m = s.masks.as_ref().unwrap();
        assert_eq!(components(&m.target, 224, 224), 1);
        assert_eq!(components(m.distractors.as_ref().unwrap(), 224, 224), 48);
        assert_eq!(s.attributes["feature"], "color");
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(synthesize(&SynthSpec::new(Feature::Color, 0.0, 1)).is_err());
        assert!(synthesize(&SynthSpec::new(Feature::Orientation, 0.0, 1)).is_err());
        assert!(synthesize(&SynthSpec::new(Feature::Size, 1.0, 1)).is_err());
        assert!(synthesize(&SynthSpec::new(Feature::Size, 3.0, 1)).is_err());
        let mut spec = SynthSpec::new(Feature::Color, 90.0, 1);
        spec.grid = (1, 7);
        assert!(synthesize(&spec).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec::new(Feature::Orientation, 45.0, 77);
        let a = synthesize(&spec).unwrap();
        let b = synthesize(&spec).unwrap();
        assert_eq!(
            a.image.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.image.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a, b);
        assert_ne!(
            synthesize(&SynthSpec::new(Feature::Orientation, 45.0, 78))
                .unwrap()
                .image,
            a.image
        );
    }

    #[test]
    fn size_target_scales_area() {
        let big = synthesize(&SynthSpec::new(Feature::Size, 2.0, 3)).unwrap();
        let m = big.masks.unwrap();
        let t = m.target.iter().filter(|&&b| b).count() as f64;
        let d = m.distractors.unwrap().iter().filter(|&&b| b).count() as f64 / 48.0;
        assert!(t / d > 3.0 && t / d < 5.0, "area ratio {}", t / d);
    }

    #[test]
    fn hue_wheel() {
        assert_eq!(hue_to_rgb(0.0), [1.0, 0.0, 0.0]);
        assert_eq!(hue_to_rgb(120.0), [0.0, 1.0, 0.0]);
        assert_eq!(hue_to_rgb(240.0), [0.0, 0.0, 1.0]);
        assert_eq!(hue_to_rgb(300.0), [1.0, 0.0, 1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn masks_exact_and_disjoint(feature in prop_oneof![Just(Feature::Color), Just(Feature::Orientation), Just(Feature::Size)],
                                    seed in any::<u64>(), t in 0.1f64..1.0, jitter in 0.0f64..1.0) {
            let difference = match feature {
                Feature::Color => 180.0 * t,
                Feature::Orientation => 90.0 * t,
                Feature::Size => 0.3 + 1.6 * t,
            };
            prop_assume!(difference != 1.0);
            let mut spec = SynthSpec::new(feature, difference, seed);
            spec.jitter = jitter;
            spec.grid = (3, 4);
            let s = synthesize(&spec).unwrap();
            let m = s.masks.unwrap();
            let (w, h) = spec.canvas_size();
            let bg = spec.geometry.background;
            let plane = w * h;
            for i in 0..plane {
                let member = m.target[i] || m.distractors.as_ref().unwrap()[i];
                prop_assert!(!(m.target[i] && m.distractors.as_ref().unwrap()[i]));
                let differs = (0..3).any(|c| s.image.data()[c * plane + i] != quantize8(bg));
                // Any drawn pixel belongs to a mask.
                if differs {
                    prop_assert!(member);
                }
            }
            prop_assert_eq!(components(&m.target, w, h), 1);
        }
    }
}
