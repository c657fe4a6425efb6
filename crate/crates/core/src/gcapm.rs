//! Global class-activation probability map.
//!
//! All per-class maps of a sample are weighted, normalized per pixel into a
//! class distribution, and each pixel is assigned the class with the highest
//! probability. Pixels whose strongest weighted activation falls below the
//! background threshold carry no class.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::cam::Cam;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const DEFAULT_TAU: f64 = 0.05;

/// Per-class fusion weights, normalized to sum to 1.
///
/// Weights are rounded to f32 precision after normalization, so any positive
/// rescaling of the raw weights yields the same canonical vector and scores
/// `weight * cam` are exact f64 products.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("class weights must be finite and nonnegative".into()));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidArgument("class weights sum to zero".into()));
        }
        Ok(ClassWeights(raw.iter().map(|w| (w / sum) as f32 as f64).collect()))
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        Self::new(&vec![1.0; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How class weights are chosen for a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// The classifier's softmax output for the sample.
    #[default]
    Softmax,
    Uniform,
}

impl WeightMode {
    pub fn weights(self, probs: &[f64]) -> Result<ClassWeights> {
        match self {
            WeightMode::Softmax => ClassWeights::new(probs),
            WeightMode::Uniform => ClassWeights::uniform(probs.len()),
        }
    }
}

/// Per-pixel class distribution P(c | cam(h, w)).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    height: usize,
    width: usize,
    num_classes: usize,
    /// Pixel-major: `probs[(pixel * C) + c]`. Zero at background pixels.
    probs: Vec<f64>,
    foreground: Vec<bool>,
}

impl ProbField {
    /// Builds a field from explicit per-pixel vectors; `None` marks background.
    pub fn from_pixels(height: usize, width: usize, num_classes: usize, pixels: &[Option<Vec<f64>>]) -> Result<Self> {
        if pixels.len() != height * width || num_classes == 0 {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width],
                actual: vec![pixels.len()],
            });
        }
        let mut probs = Vec::with_capacity(pixels.len() * num_classes);
        let mut foreground = Vec::with_capacity(pixels.len());
        for p in pixels {
            match p {
                Some(v) => {
                    if v.len() != num_classes || v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                        return Err(Error::InvalidArgument("malformed pixel distribution".into()));
                    }
                    if (v.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                        return Err(Error::InvalidArgument("pixel distribution does not sum to 1".into()));
                    }
                    probs.extend_from_slice(v);
                    foreground.push(true);
                }
                None => {
                    probs.extend(std::iter::repeat_n(0.0, num_classes));
                    foreground.push(false);
                }
            }
        }
        Ok(ProbField {
            height,
            width,
            num_classes,
            probs,
            foreground,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Class distribution at a pixel, `None` for background.
    pub fn at(&self, row: usize, col: usize) -> Option<&[f64]> {
        let p = row * self.width + col;
        self.foreground[p].then(|| &self.probs[p * self.num_classes..(p + 1) * self.num_classes])
    }

    pub fn is_foreground(&self, row: usize, col: usize) -> bool {
        self.foreground[row * self.width + col]
    }
}

/// Fuses normalized class maps into a [`ProbField`].
///
/// `score_c = w_c * cam_c(h, w)`. A pixel is background when its largest
/// score is below `tau` or is zero; otherwise `P(c) = score_c / Σ score`.
pub fn fuse(cams: &[Cam], weights: &ClassWeights, tau: f64) -> Result<ProbField> {
    if cams.is_empty() || cams.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} cams for {} class weights",
            cams.len(),
            weights.len()
        )));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument("tau must be nonnegative".into()));
    }
    let (h, w) = (cams[0].height(), cams[0].width());
    if cams.iter().any(|c| c.height() != h || c.width() != w) {
        return Err(Error::InvalidArgument("cams differ in dimensions".into()));
    }
    let n = cams.len();
    let mut probs = vec![0.0; h * w * n];
    let mut foreground = vec![false; h * w];
    let mut scores = vec![0.0f64; n];
    for p in 0..h * w {
        for (c, cam) in cams.iter().enumerate() {
            scores[c] = weights.0[c] * cam.values()[p] as f64;
        }
        let best = scores.iter().copied().fold(0.0f64, f64::max);
        if best < tau || best <= 0.0 {
            continue;
        }
        let total: f64 = scores.iter().sum();
        foreground[p] = true;
        for c in 0..n {
            probs[p * n + c] = scores[c] / total;
        }
    }
    Ok(ProbField {
        height: h,
        width: w,
        num_classes: n,
        probs,
        foreground,
    })
}

/// Winning class per pixel, `None` for background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GcapmMap {
    height: usize,
    width: usize,
    num_classes: usize,
    classes: Vec<Option<usize>>,
}

impl GcapmMap {
    pub fn new(height: usize, width: usize, num_classes: usize, classes: Vec<Option<usize>>) -> Result<Self> {
        if classes.len() != height * width || classes.iter().flatten().any(|&c| c >= num_classes) {
            return Err(Error::InvalidArgument("malformed class map".into()));
        }
        Ok(GcapmMap {
            height,
            width,
            num_classes,
            classes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn classes(&self) -> &[Option<usize>] {
        &self.classes
    }

    pub fn at(&self, row: usize, col: usize) -> Option<usize> {
        self.classes[row * self.width + col]
    }

    /// Pixel count for each class, background excluded.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for c in self.classes.iter().flatten() {
            counts[*c] += 1;
        }
        counts
    }
}

/// Per-pixel argmax with lowest-index tie-break; background is preserved.
pub fn argmax_map(field: &ProbField) -> GcapmMap {
    let n = field.num_classes;
    let classes = (0..field.height * field.width)
        .map(|p| field.foreground[p].then(|| crate::argmax(&field.probs[p * n..(p + 1) * n])))
        .collect();
    GcapmMap {
        height: field.height,
        width: field.width,
        num_classes: n,
        classes,
    }
}

/// Pixels assigned to `predicted_class`.
pub fn predicted_region(map: &GcapmMap, predicted_class: usize) -> Result<BinaryMask> {
    if predicted_class >= map.num_classes {
        return Err(Error::InvalidArgument(format!(
            "class {predicted_class} out of range for {} classes",
            map.num_classes
        )));
    }
    BinaryMask::new(
        map.height,
        map.width,
        map.classes.iter().map(|c| *c == Some(predicted_class)).collect(),
    )
}

/// Class index -> RGB colours for rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub background: [u8; 3],
    pub classes: Vec<[u8; 3]>,
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            background: [0, 0, 0],
            classes: vec![
                [230, 25, 75],
                [60, 180, 75],
                [255, 225, 25],
                [0, 130, 200],
                [245, 130, 48],
                [145, 30, 180],
                [70, 240, 240],
                [240, 50, 230],
                [210, 245, 60],
                [250, 190, 212],
            ],
        }
    }
}

impl Palette {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::ManifestParse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize)]
struct Legend<'a> {
    width: usize,
    height: usize,
    background: [u8; 3],
    background_pixels: usize,
    classes: Vec<LegendEntry<'a>>,
}

#[derive(Serialize)]
struct LegendEntry<'a> {
    class: usize,
    rgb: &'a [u8; 3],
    pixels: usize,
}

/// Path of the legend written next to a rendered map.
pub fn legend_path(png: &Path) -> PathBuf {
    png.with_extension("legend.toml")
}

/// Writes the map as an RGB PNG plus a legend sidecar ([`legend_path`]).
pub fn render(map: &GcapmMap, palette: &Palette, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if palette.classes.len() < map.num_classes {
        return Err(Error::InvalidArgument(format!(
            "palette has {} colours for {} classes",
            palette.classes.len(),
            map.num_classes
        )));
    }
    let img = RgbImage::from_fn(map.width as u32, map.height as u32, |x, y| {
        Rgb(match map.at(y as usize, x as usize) {
            Some(c) => palette.classes[c],
            None => palette.background,
        })
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let counts = map.class_counts();
    let legend = Legend {
        width: map.width,
        height: map.height,
        background: palette.background,
        background_pixels: map.classes.iter().filter(|c| c.is_none()).count(),
        classes: (0..map.num_classes)
            .map(|c| LegendEntry {
                class: c,
                rgb: &palette.classes[c],
                pixels: counts[c],
            })
            .collect(),
    };
    let text = toml::to_string(&legend).map_err(|e| Error::Serialize(e.to_string()))?;
    let lp = legend_path(path);
    fs::write(&lp, text).map_err(|e| Error::io(&lp, e))
}
