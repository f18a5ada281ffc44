//! JSON dataset manifest and validated in-memory datasets.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::netpbm::{load_image, load_mask};
use super::prep::class_frequencies;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split {other:?}; use train, valid or test"))),
        }
    }
}

/// One image/mask pair, paths relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: String,
    pub mask: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: Vec<String>,
    #[serde(default)]
    pub void_index: Option<u32>,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::Config(format!("manifest lists {} classes; need at least 2", self.classes.len())));
        }
        if let Some(v) = self.void_index {
            if (v as usize) < self.classes.len() {
                return Err(Error::Config(format!(
                    "void_index {v} collides with class {:?}",
                    self.classes[v as usize]
                )));
            }
            if v > 255 {
                return Err(Error::Config(format!("void_index {v} cannot be stored in an 8-bit mask")));
            }
        }
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for e in &self.samples {
            if let Some(prev) = seen.insert(&e.image, e.split) {
                if prev != e.split {
                    return Err(Error::Config(format!(
                        "image {} appears in both {} and {} splits",
                        e.image,
                        prev.name(),
                        e.split.name()
                    )));
                }
                return Err(Error::Config(format!("image {} listed twice", e.image)));
            }
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|e| e.split == split).count()
    }
}

/// A loaded image with its label map.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `H×W×3`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// Row-major labels, `H·W` entries.
    pub mask: Vec<u32>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Vec<u32>) -> Result<Self> {
        let (h, w, _) = image.dims3("sample")?;
        if mask.len() != h * w {
            return Err(Error::dim("sample", "mask pixels", h * w, mask.len()));
        }
        Ok(Sample {
            id: id.into(),
            image,
            mask,
        })
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.image.shape()[0], self.image.shape()[1])
    }
}

/// Every sample of a manifest, loaded and validated.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
    samples: Vec<(Split, Sample)>,
}

impl Dataset {
    /// Loads all files in parallel. Fails on the first sample whose image
    /// and mask disagree in extent or whose labels are neither a class nor
    /// the void index.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let k = manifest.classes.len() as u32;
        let void = manifest.void_index;
        let samples = manifest
            .samples
            .par_iter()
            .map(|e| {
                let image_path = root.join(&e.image);
                let mask_path = root.join(&e.mask);
                let image = load_image(&image_path)?;
                let (h, w, mask) = load_mask(&mask_path)?;
                let (ih, iw, _) = image.dims3("dataset")?;
                if (h, w) != (ih, iw) {
                    return Err(Error::Format {
                        path: mask_path.display().to_string(),
                        reason: format!("mask is {h}×{w} but image {} is {ih}×{iw}", e.image),
                    });
                }
                if let Some(&bad) = mask.iter().find(|&&l| l >= k && Some(l) != void) {
                    return Err(Error::Format {
                        path: mask_path.display().to_string(),
                        reason: format!("label {bad} is neither one of {k} classes nor void"),
                    });
                }
                let id = Path::new(&e.image)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| e.image.clone());
                Ok((e.split, Sample::new(id, image, mask)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            manifest,
            root,
            samples,
        })
    }

    pub fn from_samples(manifest: Manifest, samples: Vec<(Split, Sample)>) -> Self {
        Dataset {
            manifest,
            root: PathBuf::new(),
            samples,
        }
    }

    pub fn classes(&self) -> usize {
        self.manifest.classes.len()
    }

    pub fn void_index(&self) -> Option<u32> {
        self.manifest.void_index
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|(s, _)| *s == split).map(|(_, x)| x).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-class pixel frequencies of one split, void excluded.
    pub fn class_frequencies(&self, split: Split) -> Result<Vec<f64>> {
        let masks: Vec<&[u32]> = self.split(split).iter().map(|s| s.mask.as_slice()).collect();
        if masks.is_empty() {
            return Err(Error::Usage(format!("split {} is empty", split.name())));
        }
        class_frequencies(&masks, self.classes(), self.void_index())
    }
}
