//! Dataset manifest: a versioned TOML document listing classified samples.
//!
//! ```toml
//! version = 1
//! height = 16
//! width = 16
//!
//! [[samples]]
//! id = "s000"
//! num_classes = 3
//! probs = [0.2, 0.5, 0.3]
//! predicted_class = 1
//! true_class = 1
//! activation_ref = "tensors/s000_act.gct"
//! gradient_refs = ["tensors/s000_g0.gct", "tensors/s000_g1.gct", "tensors/s000_g2.gct"]
//! mask_ref = "masks/s000.png"
//! ```
//!
//! File references are relative to the manifest's directory. A record carries
//! either `activation_ref` plus one gradient per class, or one `cam_refs`
//! entry per class, never both.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::argmax;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const PROB_SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub num_classes: usize,
    pub probs: Vec<f64>,
    pub predicted_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_class: Option<usize>,
    /// Grayscale input image, used by the corruption command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gradient_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cam_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_ref: Option<String>,
}

/// Where a record's class activation maps come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamSource<'a> {
    Gradients {
        activation: &'a str,
        gradients: &'a [String],
    },
    Precomputed(&'a [String]),
}

impl SampleRecord {
    pub fn cam_source(&self) -> Result<CamSource<'_>> {
        let with_grads = self.activation_ref.is_some() || !self.gradient_refs.is_empty();
        let with_cams = !self.cam_refs.is_empty();
        match (with_grads, with_cams) {
            (true, false) => {
                let activation = self.activation_ref.as_deref().ok_or_else(|| self.invalid("gradient_refs without activation_ref"))?;
                if self.gradient_refs.len() != self.num_classes {
                    return Err(self.invalid(&format!(
                        "{} gradient_refs for {} classes",
                        self.gradient_refs.len(),
                        self.num_classes
                    )));
                }
                Ok(CamSource::Gradients {
                    activation,
                    gradients: &self.gradient_refs,
                })
            }
            (false, true) => {
                if self.cam_refs.len() != self.num_classes {
                    return Err(self.invalid(&format!(
                        "{} cam_refs for {} classes",
                        self.cam_refs.len(),
                        self.num_classes
                    )));
                }
                Ok(CamSource::Precomputed(&self.cam_refs))
            }
            (true, true) => Err(self.invalid("both activation/gradient refs and cam_refs given")),
            (false, false) => Err(self.invalid("no activation/gradient refs or cam_refs")),
        }
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_correct(&self) -> Option<bool> {
        self.true_class.map(|t| t == self.predicted_class)
    }

    fn invalid(&self, detail: &str) -> Error {
        Error::InvalidRecord {
            id: self.id.clone(),
            detail: detail.to_string(),
        }
    }

    /// Checks the record on its own, without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(self.invalid("num_classes must be at least 2"));
        }
        if self.probs.len() != self.num_classes {
            return Err(self.invalid(&format!(
                "{} probabilities for {} classes",
                self.probs.len(),
                self.num_classes
            )));
        }
        if self.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(self.invalid("probabilities must be finite and nonnegative"));
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::NotNormalized {
                id: self.id.clone(),
                sum,
            });
        }
        let best = argmax(&self.probs);
        if self.predicted_class != best {
            return Err(Error::PredictionMismatch {
                id: self.id.clone(),
                predicted: self.predicted_class,
                argmax: best,
            });
        }
        if let Some(t) = self.true_class {
            if t >= self.num_classes {
                return Err(self.invalid(&format!("true_class {t} out of range")));
            }
        }
        self.cam_source()?;
        Ok(())
    }

    fn referenced_files(&self) -> impl Iterator<Item = &String> {
        self.image_ref
            .iter()
            .chain(self.activation_ref.iter())
            .chain(self.gradient_refs.iter())
            .chain(self.cam_refs.iter())
            .chain(self.mask_ref.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    height: usize,
    width: usize,
    #[serde(default)]
    samples: Vec<SampleRecord>,
}

/// A validated list of samples plus the evaluation resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub height: usize,
    pub width: usize,
    pub samples: Vec<SampleRecord>,
    /// Directory that relative references resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(height: usize, width: usize, base_dir: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            height,
            width,
            samples: Vec::new(),
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, reference: &str) -> PathBuf {
        self.base_dir.join(reference)
    }

    /// Shared class count, or `None` for an empty manifest.
    pub fn num_classes(&self) -> Option<usize> {
        self.samples.first().map(|s| s.num_classes)
    }

    /// Checks every record, id uniqueness and the shared class count.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidShape(vec![self.height, self.width]));
        }
        let mut seen = HashSet::new();
        for rec in &self.samples {
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::DuplicateId(rec.id.clone()));
            }
            rec.validate()?;
            if Some(rec.num_classes) != self.num_classes() {
                return Err(rec.invalid("num_classes differs from the first record"));
            }
        }
        Ok(())
    }

    fn check_files(&self) -> Result<()> {
        for rec in &self.samples {
            for r in rec.referenced_files() {
                let path = self.resolve(r);
                if !path.is_file() {
                    return Err(Error::MissingFile {
                        id: rec.id.clone(),
                        path,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        let file = ManifestFile {
            version: MANIFEST_VERSION,
            height: self.height,
            width: self.width,
            samples: self.samples.clone(),
        };
        toml::to_string(&file).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// Validates and writes the manifest; references are written verbatim.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let path = path.as_ref();
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Parses manifest text; `base_dir` anchors relative references. Does
    /// not check that referenced files exist.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>, origin: &Path) -> Result<Self> {
        let file: ManifestFile = toml::from_str(text).map_err(|e| Error::ManifestParse {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        if file.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion(file.version));
        }
        let manifest = DatasetManifest {
            height: file.height,
            width: file.width,
            samples: file.samples,
            base_dir: base_dir.into(),
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Loads, validates and checks that every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = DatasetManifest::parse(&text, base, path)?;
    manifest.check_files()?;
    Ok(manifest)
}
