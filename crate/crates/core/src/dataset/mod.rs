//! Evaluation stimuli: a JSON manifest describing images and their ground
//! truth on disk, loaders for each ground-truth file kind, fixation density
//! maps, and a generator for synthetic singleton search arrays.

mod density;
mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageops::{load_gray, load_rgb, save_gray_png, tensor_to_rgb_image};
use crate::metrics::{FixationSet, GroundTruth, RegionMasks};
use crate::tensor::{load_tensor, save_tensor, Tensor};

pub use density::density_from_fixations;
pub use synth::{synthesize, Feature, SynthGeometry, SynthSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("stimulus {id}: missing file {path}")]
    MissingFile { id: String, path: PathBuf },
    #[error("stimulus {id}: cannot read {path}: {reason}")]
    Unreadable { id: String, path: PathBuf, reason: String },
    #[error("stimulus {id}: malformed fixation CSV {path}: {reason}")]
    MalformedCsv { id: String, path: PathBuf, reason: String },
    #[error("stimulus {id}: {what} is {got_w}x{got_h} but the image is {want_w}x{want_h}")]
    SizeMismatch {
        id: String,
        what: &'static str,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("stimulus {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
}

/// One manifest entry. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixations: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor_mask: Option<PathBuf>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

/// An evaluation unit: image plus whatever ground truth it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct Stimulus {
    pub id: String,
    /// `[3, H, W]` RGB in `[0, 1]`.
    pub image: Tensor,
    pub fixations: Option<FixationSet>,
    /// `[H, W]`, sums to 1.
    pub density: Option<Tensor>,
    pub masks: Option<RegionMasks>,
    pub attributes: BTreeMap<String, String>,
}

impl Stimulus {
    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    /// The stored density, or one built from the fixations with
    /// `sigma = sigma_fraction · width` when only points are available.
    pub fn effective_density(&self, sigma_fraction: f64) -> Option<Tensor> {
        match (&self.density, &self.fixations) {
            (Some(d), _) => Some(d.clone()),
            (None, Some(f)) if !f.is_empty() => {
                density_from_fixations(f, (self.width(), self.height()), sigma_fraction * self.width() as f64).ok()
            }
            _ => None,
        }
    }

    pub fn ground_truth<'a>(&'a self, density: Option<&'a Tensor>) -> GroundTruth<'a> {
        GroundTruth {
            fixations: self.fixations.as_ref(),
            density,
            masks: self.masks.as_ref(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |reason: String| DatasetError::Invalid {
            id: self.id.clone(),
            reason,
        };
        let (c, h, w) = self.image.dims3().map_err(|e| invalid(e.to_string()))?;
        if c != 3 {
            return Err(invalid(format!("image has {c} channels, expected 3")));
        }
        if self.fixations.is_none() && self.density.is_none() && self.masks.is_none() {
            return Err(invalid("no fixations, density or masks".into()));
        }
        if let Some(f) = &self.fixations {
            f.check_bounds(w, h).map_err(|e| invalid(e.to_string()))?;
        }
        if let Some(d) = &self.density {
            self.check_size("density", d.shape())?;
        }
        if let Some(m) = &self.masks {
            self.check_size("target mask", &[m.height, m.width])?;
        }
        Ok(())
    }

    fn check_size(&self, what: &'static str, shape: &[usize]) -> Result<(), DatasetError> {
        if shape != [self.height(), self.width()] {
            return Err(DatasetError::SizeMismatch {
                id: self.id.clone(),
                what,
                got_w: shape.get(1).copied().unwrap_or(0),
                got_h: shape.first().copied().unwrap_or(0),
                want_w: self.width(),
                want_h: self.height(),
            });
        }
        Ok(())
    }
}

/// A manifest and the directory its relative paths resolve against.
/// Entries are loaded on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub fn load_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    Manifest::load(path)
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let err = |reason: String| DatasetError::Manifest {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.id.as_str())) {
            return Err(err(format!("duplicate stimulus id {:?}", dup.id)));
        }
        Ok(Self {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(&self.entries).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| DatasetError::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_record(&self, index: usize) -> Result<Stimulus, DatasetError> {
        load_entry(&self.root, &self.entries[index])
    }

    pub fn load_all(&self) -> Result<Vec<Stimulus>, DatasetError> {
        (0..self.len()).map(|i| self.load_record(i)).collect()
    }
}

fn existing(root: &Path, id: &str, rel: &Path) -> Result<PathBuf, DatasetError> {
    let p = root.join(rel);
    if !p.is_file() {
        return Err(DatasetError::MissingFile {
            id: id.to_string(),
            path: p,
        });
    }
    Ok(p)
}

fn unreadable(id: &str, path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Unreadable {
        id: id.to_string(),
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn is_drt(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("drt"))
}

/// Grayscale PNG (or `.drt`) as an `[H, W]` tensor; PNG values scaled to `[0, 1]`.
fn load_map(id: &str, path: &Path) -> Result<Tensor, DatasetError> {
    if is_drt(path) {
        let t = load_tensor(path).map_err(|e| unreadable(id, path, e))?;
        t.dims2().map_err(|e| unreadable(id, path, e))?;
        Ok(t)
    } else {
        load_gray(path).map_err(|e| unreadable(id, path, e))
    }
}

pub fn read_fixations_csv(id: &str, path: &Path) -> Result<FixationSet, DatasetError> {
    let malformed = |reason: String| DatasetError::MalformedCsv {
        id: id.to_string(),
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| malformed(e.to_string()))?;
    let headers = reader.headers().map_err(|e| malformed(e.to_string()))?;
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
        return Err(malformed(format!(
            "expected header \"x,y\", found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut points = Vec::new();
    for row in reader.deserialize::<(usize, usize)>() {
        points.push(row.map_err(|e| malformed(e.to_string()))?);
    }
    Ok(FixationSet::new(points))
}

pub fn write_fixations_csv(fix: &FixationSet, path: &Path) -> Result<(), DatasetError> {
    let werr = |e: csv::Error| DatasetError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(werr)?;
    w.write_record(["x", "y"]).map_err(werr)?;
    for &(x, y) in &fix.points {
        w.serialize((x, y)).map_err(werr)?;
    }
    w.flush().map_err(|e| werr(e.into()))
}

pub fn load_entry(root: &Path, entry: &ManifestEntry) -> Result<Stimulus, DatasetError> {
    let id = entry.id.as_str();
    let image_path = existing(root, id, &entry.image)?;
    let image = load_rgb(&image_path).map_err(|e| unreadable(id, &image_path, e))?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let size_check = |what: &'static str, t: &Tensor| -> Result<(), DatasetError> {
        let (th, tw) = (t.shape()[0], t.shape()[1]);
        if (th, tw) != (h, w) {
            return Err(DatasetError::SizeMismatch {
                id: id.to_string(),
                what,
                got_w: tw,
                got_h: th,
                want_w: w,
                want_h: h,
            });
        }
        Ok(())
    };

    let fixations = match &entry.fixations {
        Some(rel) => {
            let p = existing(root, id, rel)?;
            let f = read_fixations_csv(id, &p)?;
            f.check_bounds(w, h).map_err(|e| DatasetError::MalformedCsv {
                id: id.to_string(),
                path: p.clone(),
                reason: e.to_string(),
            })?;
            Some(f)
        }
        None => None,
    };
    let density = match &entry.density {
        Some(rel) => {
            let p = existing(root, id, rel)?;
            let d = load_map(id, &p)?;
            size_check("density", &d)?;
            let total: f64 = d.data().iter().map(|&v| v as f64).sum();
            if !(total > 0.0) || d.data().iter().any(|&v| v < 0.0) {
                return Err(unreadable(id, &p, "density must be non-negative with positive sum"));
            }
            Some(d.map(|v| (v as f64 / total) as f32))
        }
        None => None,
    };
    let target = match &entry.target_mask {
        Some(rel) => {
            let p = existing(root, id, rel)?;
            let t = load_map(id, &p)?;
            size_check("target mask", &t)?;
            Some(t)
        }
        None => None,
    };
    let distractors = match &entry.distractor_mask {
        Some(rel) => {
            let p = existing(root, id, rel)?;
            let d = load_map(id, &p)?;
            size_check("distractor mask", &d)?;
            Some(d)
        }
        None => None,
    };
    let masks = match (target, distractors) {
        (Some(t), d) => Some(
            RegionMasks::from_tensors(&t, d.as_ref()).map_err(|e| DatasetError::Invalid {
                id: id.to_string(),
                reason: e.to_string(),
            })?,
        ),
        (None, Some(_)) => {
            return Err(DatasetError::Invalid {
                id: id.to_string(),
                reason: "distractor mask given without a target mask".into(),
            })
        }
        (None, None) => None,
    };
    let record = Stimulus {
        id: id.to_string(),
        image,
        fixations,
        density,
        masks,
        attributes: entry.attributes.clone(),
    };
    record.validate()?;
    Ok(record)
}

/// Write a stimulus under `dir` (image and masks as PNG, density as `.drt`,
/// fixations as CSV) and return its manifest entry.
pub fn write_stimulus(dir: &Path, s: &Stimulus) -> Result<ManifestEntry, DatasetError> {
    s.validate()?;
    let werr = |path: &Path, e: &dyn std::fmt::Display| DatasetError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| werr(dir, &e))?;
    let rel = |suffix: &str| PathBuf::from(format!("{}{suffix}", s.id));

    let image = rel(".png");
    let img = tensor_to_rgb_image(&s.image).map_err(|e| werr(&dir.join(&image), &e))?;
    img.save_with_format(dir.join(&image), image::ImageFormat::Png)
        .map_err(|e| werr(&dir.join(&image), &e))?;

    let mut entry = ManifestEntry {
        id: s.id.clone(),
        image,
        fixations: None,
        density: None,
        target_mask: None,
        distractor_mask: None,
        attributes: s.attributes.clone(),
    };
    if let Some(f) = &s.fixations {
        let p = rel("_fixations.csv");
        write_fixations_csv(f, &dir.join(&p))?;
        entry.fixations = Some(p);
    }
    if let Some(d) = &s.density {
        let p = rel("_density.drt");
        save_tensor(d, dir.join(&p)).map_err(|e| werr(&dir.join(&p), &e))?;
        entry.density = Some(p);
    }
    if let Some(m) = &s.masks {
        let p = rel("_target.png");
        save_gray_png(&m.target_tensor(), &dir.join(&p)).map_err(|e| werr(&dir.join(&p), &e))?;
        entry.target_mask = Some(p);
        if let Some(d) = m.distractor_tensor() {
            let p = rel("_distractors.png");
            save_gray_png(&d, &dir.join(&p)).map_err(|e| werr(&dir.join(&p), &e))?;
            entry.distractor_mask = Some(p);
        }
    }
    Ok(entry)
}

/// Write every stimulus plus `manifest.json` into `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, stimuli: &[Stimulus]) -> Result<PathBuf, DatasetError> {
    let entries = stimuli
        .iter()
        .map(|s| write_stimulus(dir, s))
        .collect::<Result<Vec<_>, _>>()?;
    let path = dir.join("manifest.json");
    Manifest {
        root: dir.to_path_buf(),
        entries,
    }
    .write(&path)?;
    Ok(path)
}
