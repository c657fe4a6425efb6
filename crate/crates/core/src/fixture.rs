//! Synthetic micro-net datasets.
//!
//! Each image is a noisy dark background with one disc, partly bright and
//! partly faint; the disc is the lesion mask. A fixed hand-set [`MicroNet`] scores the images: class 0
//! responds to the bright interior and its edges, class 1 to the
//! background, class 2 to nothing. Blurring weakens the class 0 evidence,
//! so confidence falls steadily with corruption.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, SampleRecord};
use crate::mask::BinaryMask;
use crate::micronet::MicroNet;
use crate::pipeline::{evaluate_record, PipelineOptions};
use crate::tensor::{write_tensor, Tensor};

pub const FIXTURE_SIDE: usize = 20;
pub const FIXTURE_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub samples: usize,
    pub seed: u64,
    /// Plant true labels; correctness becomes likelier as attention
    /// sensitivity grows.
    pub labels: bool,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            samples: 30,
            seed: 0,
            labels: true,
        }
    }
}

/// The fixed fixture classifier: 3 filters (bright, edge, dark), 3 classes.
pub fn fixture_net() -> MicroNet {
    let mut conv = Vec::with_capacity(27);
    conv.extend([1.0f32 / 9.0; 9]);
    conv.extend((0..9).map(|i| if i == 4 { 1.0f32 } else { -1.0 / 8.0 }));
    conv.extend([-1.0f32 / 9.0; 9]);
    MicroNet::from_parts(
        FIXTURE_SIDE,
        Tensor::new(vec![3, 3, 3], conv).expect("static shape"),
        Tensor::new(vec![3], vec![-0.45, 0.0, 0.45]).expect("static shape"),
        Tensor::new(
            vec![FIXTURE_CLASSES, 3],
            vec![45.0, 60.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0],
        )
        .expect("static shape"),
        Tensor::new(vec![FIXTURE_CLASSES], vec![0.0; FIXTURE_CLASSES]).expect("static shape"),
    )
    .expect("static parts are consistent")
}

/// One synthetic image and its lesion mask.
///
/// A random share of the disc, cut off by a chord in a random direction, is
/// only faintly brighter than the background; the bright filter misses it,
/// which spreads attention sensitivity across samples.
pub fn synth_image(rng: &mut ChaCha8Rng, side: usize) -> Result<(Tensor, BinaryMask)> {
    let s = side as f64;
    let radius = rng.random_range(0.125 * s..0.275 * s);
    let cy = rng.random_range(0.3 * s..0.65 * s);
    let cx = rng.random_range(0.3 * s..0.65 * s);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (uy, ux) = angle.sin_cos();
    let cut = rng.random_range(-1.0..0.2);
    let offset = |r: usize, c: usize| (r as f64 - cy, c as f64 - cx);
    let mask = BinaryMask::from_fn(side, side, |r, c| {
        let (dy, dx) = offset(r, c);
        dy * dy + dx * dx <= radius * radius
    })?;
    let bg = Normal::new(0.2, 0.05).expect("valid normal");
    let faint = Normal::new(0.32, 0.05).expect("valid normal");
    let bright = Normal::new(0.85, 0.05).expect("valid normal");
    let mut data = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let v: f64 = if !mask.get(r, c) {
                bg.sample(rng)
            } else {
                let (dy, dx) = offset(r, c);
                if (dy * uy + dx * ux) / radius < cut {
                    faint.sample(rng)
                } else {
                    bright.sample(rng)
                }
            };
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Ok((Tensor::new(vec![side, side], data)?, mask))
}

/// Runs `net` on `image` and writes the image, activations and per-class
/// gradients under `dir`. Returns an unlabeled record whose references are
/// relative to `dir`; `mask_ref` is left empty.
pub fn export_sample(net: &MicroNet, image: &Tensor, id: &str, dir: &Path) -> Result<SampleRecord> {
    for sub in ["images", "tensors"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let trace = net.forward(image)?;
    let image_ref = format!("images/{id}.gct");
    let activation_ref = format!("tensors/{id}_act.gct");
    write_tensor(image, dir.join(&image_ref))?;
    write_tensor(&trace.activations, dir.join(&activation_ref))?;
    let mut gradient_refs = Vec::with_capacity(net.classes());
    for c in 0..net.classes() {
        let r = format!("tensors/{id}_grad{c}.gct");
        write_tensor(&net.backward_class(image, c)?, dir.join(&r))?;
        gradient_refs.push(r);
    }
    Ok(SampleRecord {
        id: id.to_string(),
        num_classes: net.classes(),
        predicted_class: crate::argmax(&trace.probs),
        probs: trace.probs,
        true_class: None,
        image_ref: Some(image_ref),
        activation_ref: Some(activation_ref),
        gradient_refs,
        cam_refs: Vec::new(),
        mask_ref: None,
    })
}

/// Writes a complete dataset to `dir`: `net/`, `images/`, `tensors/`,
/// `masks/` and `manifest.toml`.
pub fn generate(dir: impl AsRef<Path>, spec: &FixtureSpec) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let masks = dir.join("masks");
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    let net = fixture_net();
    net.save(dir.join("net"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut manifest = DatasetManifest::new(FIXTURE_SIDE, FIXTURE_SIDE, dir);
    for i in 0..spec.samples {
        let id = format!("s{i:04}");
        let (image, mask) = synth_image(&mut rng, FIXTURE_SIDE)?;
        let mut rec = export_sample(&net, &image, &id, dir)?;
        let mask_ref = format!("masks/{id}.png");
        mask.save_png(dir.join(&mask_ref))?;
        rec.mask_ref = Some(mask_ref);
        manifest.samples.push(rec);
    }
    if spec.labels {
        let mut label_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        label_rng.set_stream(1);
        let opts = PipelineOptions::default();
        for k in 0..manifest.samples.len() {
            let report = evaluate_record(&manifest, &manifest.samples[k], &opts)?.report;
            let p = (0.1 + 0.85 * report.att_sensitivity.unwrap_or(0.0)).clamp(0.0, 1.0);
            let rec = &mut manifest.samples[k];
            rec.true_class = Some(if label_rng.random_bool(p) {
                rec.predicted_class
            } else {
                (rec.predicted_class + label_rng.random_range(1..rec.num_classes)) % rec.num_classes
            });
        }
    }
    manifest.save(dir.join("manifest.toml"))?;
    Ok(manifest)
}
