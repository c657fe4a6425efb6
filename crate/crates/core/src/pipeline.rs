//! Per-sample evaluation: class maps -> fused map -> attention region ->
//! coverage report.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cam::{alpha_weights, grad_cam, minmax_normalize, upsample_bilinear, Cam};
use crate::error::{Error, Result};
use crate::gcapm::{argmax_map, fuse, predicted_region, GcapmMap, WeightMode, DEFAULT_TAU};
use crate::manifest::{CamSource, DatasetManifest, SampleRecord};
use crate::mask::{load_mask, BinaryMask, DEFAULT_MASK_THRESHOLD};
use crate::metrics::AttrReport;
use crate::tensor::read_tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub tau: f64,
    pub weights: WeightMode,
    pub mask_threshold: u8,
    /// Overrides the manifest directory when resolving mask references.
    /// Samples without a `mask_ref` look for `<id>.png` here.
    pub masks_dir: Option<PathBuf>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            tau: DEFAULT_TAU,
            weights: WeightMode::Softmax,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            masks_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub report: AttrReport,
    pub probs: Vec<f64>,
    pub map: GcapmMap,
}

/// Class maps of `rec` at manifest resolution, min-max normalized.
pub fn class_cams(manifest: &DatasetManifest, rec: &SampleRecord) -> Result<Vec<Cam>> {
    let raw = match rec.cam_source()? {
        CamSource::Gradients {
            activation,
            gradients,
        } => {
            let act = read_tensor(manifest.resolve(activation))?;
            gradients
                .iter()
                .map(|g| {
                    let grads = read_tensor(manifest.resolve(g))?;
                    grads.expect_shape(act.shape())?;
                    grad_cam(&act, &alpha_weights(&grads)?)
                })
                .collect::<Result<Vec<_>>>()?
        }
        CamSource::Precomputed(refs) => refs
            .iter()
            .map(|r| Cam::from_tensor(&read_tensor(manifest.resolve(r))?))
            .collect::<Result<Vec<_>>>()?,
    };
    raw.iter()
        .map(|c| Ok(minmax_normalize(&upsample_bilinear(c, manifest.height, manifest.width)?)))
        .collect()
}

pub fn gcapm_for(manifest: &DatasetManifest, rec: &SampleRecord, opts: &PipelineOptions) -> Result<GcapmMap> {
    let cams = class_cams(manifest, rec)?;
    let weights = opts.weights.weights(&rec.probs)?;
    Ok(argmax_map(&fuse(&cams, &weights, opts.tau)?))
}

pub fn mask_path(manifest: &DatasetManifest, rec: &SampleRecord, opts: &PipelineOptions) -> Result<PathBuf> {
    match (&rec.mask_ref, &opts.masks_dir) {
        (Some(r), Some(dir)) => Ok(dir.join(r)),
        (Some(r), None) => Ok(manifest.resolve(r)),
        (None, Some(dir)) => Ok(dir.join(format!("{}.png", rec.id))),
        (None, None) => Err(Error::InvalidRecord {
            id: rec.id.clone(),
            detail: "no mask_ref and no masks directory".into(),
        }),
    }
}

fn load_sample_mask(path: &Path, manifest: &DatasetManifest, rec: &SampleRecord, threshold: u8) -> Result<BinaryMask> {
    let mask = load_mask(path, threshold)?;
    if mask.height() != manifest.height || mask.width() != manifest.width {
        return Err(Error::InvalidRecord {
            id: rec.id.clone(),
            detail: format!(
                "mask is {}x{}, manifest resolution is {}x{}",
                mask.height(),
                mask.width(),
                manifest.height,
                manifest.width
            ),
        });
    }
    Ok(mask)
}

pub fn evaluate_record(manifest: &DatasetManifest, rec: &SampleRecord, opts: &PipelineOptions) -> Result<Evaluated> {
    let map = gcapm_for(manifest, rec, opts)?;
    let region = predicted_region(&map, rec.predicted_class)?;
    let lesion = load_sample_mask(&mask_path(manifest, rec, opts)?, manifest, rec, opts.mask_threshold)?;
    let report = AttrReport::from_masks(
        rec.id.clone(),
        &region,
        &lesion,
        rec.predicted_class,
        rec.true_class,
        rec.max_prob(),
    )?;
    Ok(Evaluated {
        report,
        probs: rec.probs.clone(),
        map,
    })
}

/// Evaluates every sample in parallel; results are sorted by id.
pub fn evaluate_manifest(manifest: &DatasetManifest, opts: &PipelineOptions) -> Result<Vec<Evaluated>> {
    let mut out = manifest
        .samples
        .par_iter()
        .map(|rec| evaluate_record(manifest, rec, opts))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.report.id.cmp(&b.report.id));
    Ok(out)
}
