//! The command implementations behind the CLI.
//!
//! Every command reads a resolved [`Settings`], writes its files under the
//! output directory and returns a short summary. Rows are always sorted by
//! sample id.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::fixture::export_sample;
use crate::gate::{build_features, fit_gate, gate, predict_select, write_features_csv, FeatureRow, GateModel};
use crate::gcapm::{legend_path, render, Palette};
use crate::manifest::{load_manifest, DatasetManifest};
use crate::metrics::{fmt_opt, write_reports_csv};
use crate::micronet::MicroNet;
use crate::monitor::{self, fit_calibration, gaussian_blur, in_ci, CalibrationModel, DriftReport};
use crate::pipeline::{evaluate_manifest, gcapm_for, mask_path, Evaluated};
use crate::tensor::read_tensor;

pub const CALIBRATION_FILE: &str = "calibration.txt";
pub const GATE_FILE: &str = "gate.txt";
pub const REPORTS_FILE: &str = "reports.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const DECISIONS_FILE: &str = "decisions.csv";
pub const DRIFT_FILE: &str = "drift.txt";
/// Offline fitting stops when more than this share of a metric is undefined.
pub const MAX_UNDEFINED_FRACTION: f64 = 0.2;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load(settings: &Settings) -> Result<DatasetManifest> {
    let path = settings.existing("manifest", &settings.manifest)?;
    let m = load_manifest(&path)?;
    info!("{}: {} samples", path.display(), m.samples.len());
    Ok(m)
}

/// Writes every `(path, bytes)` pair or none of them.
fn write_all_or_nothing(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    for (i, (path, bytes)) in files.iter().enumerate() {
        if let Err(e) = write_file(path, bytes) {
            for (p, _) in &files[..i] {
                let _ = fs::remove_file(p);
            }
            return Err(e);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSummary {
    pub samples: usize,
    pub correct: usize,
    pub calibration: CalibrationModel,
    pub gate: GateModel,
}

fn check_undefined(evals: &[Evaluated]) -> Result<()> {
    if evals.is_empty() {
        return Ok(());
    }
    let n = evals.len() as f64;
    for (name, count) in [
        ("att_sensitivity", evals.iter().filter(|e| e.report.att_sensitivity.is_none()).count()),
        ("att_fpr", evals.iter().filter(|e| e.report.att_fpr.is_none()).count()),
    ] {
        if count as f64 / n > MAX_UNDEFINED_FRACTION {
            return Err(Error::InsufficientData(format!(
                "{name} undefined for {count} of {} samples (limit {:.0}%)",
                evals.len(),
                MAX_UNDEFINED_FRACTION * 100.0
            )));
        }
    }
    Ok(())
}

/// Evaluates a labeled manifest, fits calibration and gate, and writes
/// `calibration.txt`, `gate.txt`, `reports.csv` and `features.csv`.
pub fn offline_fit(settings: &Settings) -> Result<OfflineSummary> {
    let manifest = load(settings)?;
    let out = settings.out_dir()?;
    if let Some(rec) = manifest.samples.iter().find(|r| r.true_class.is_none()) {
        return Err(Error::InvalidRecord {
            id: rec.id.clone(),
            detail: "labels required for offline fit".into(),
        });
    }
    let evals = evaluate_manifest(&manifest, &settings.pipeline())?;
    check_undefined(&evals)?;
    let reports: Vec<_> = evals.iter().map(|e| e.report.clone()).collect();
    let calibration = fit_calibration(&reports, settings.gamma)?;
    let rows: Vec<FeatureRow> = evals
        .iter()
        .map(|e| FeatureRow {
            id: e.report.id.clone(),
            features: build_features(&e.report, &e.probs),
            label: e.report.correct,
        })
        .collect();
    let features: Vec<_> = rows.iter().map(|r| r.features.clone()).collect();
    let labels: Vec<bool> = reports.iter().map(|r| r.correct == Some(true)).collect();
    let mut gate_model = fit_gate(&features, &labels, &settings.gate_params())?;
    gate_model.bias_offset = settings.bias_offset;
    let classes = manifest.num_classes().unwrap_or(0);

    let mut reports_csv = Vec::new();
    write_reports_csv(&reports, &mut reports_csv)?;
    let mut features_csv = Vec::new();
    write_features_csv(&rows, classes, &mut features_csv)?;
    create_dir(&out)?;
    write_all_or_nothing(&[
        (out.join(CALIBRATION_FILE), calibration.to_text()?.into_bytes()),
        (out.join(GATE_FILE), gate_model.to_text()?.into_bytes()),
        (out.join(REPORTS_FILE), reports_csv),
        (out.join(FEATURES_FILE), features_csv),
    ])?;
    let correct = labels.iter().filter(|&&l| l).count();
    info!(
        "fitted on {} samples ({correct} correct, {} inside calibration)",
        reports.len(),
        calibration.fitted_on
    );
    Ok(OfflineSummary {
        samples: reports.len(),
        correct,
        calibration,
        gate: gate_model,
    })
}

pub const DECISIONS_HEADER: [&str; 7] = ["id", "predicted", "att_sensitivity", "att_fpr", "in_ci", "select", "released"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateSummary {
    pub samples: usize,
    pub released: usize,
    pub abstained: usize,
}

/// Gates every sample of the manifest and writes `decisions.csv`.
pub fn runtime_gate(settings: &Settings) -> Result<GateSummary> {
    let manifest = load(settings)?;
    let out = settings.out_dir()?;
    let calibration = CalibrationModel::load(settings.existing("calibration", &settings.calibration)?)?;
    let mut model = GateModel::load(settings.existing("gate", &settings.gate)?)?;
    if settings.bias_offset != 0.0 {
        model.bias_offset = settings.bias_offset;
    }
    if let Some(c) = manifest.num_classes() {
        if c != model.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "gate model expects {} classes, manifest has {c}",
                model.num_classes()
            )));
        }
    }
    let evals = evaluate_manifest(&manifest, &settings.pipeline())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialize(e.to_string());
    w.write_record(DECISIONS_HEADER).map_err(ser)?;
    let mut released = 0;
    for e in &evals {
        let r = &e.report;
        let select = predict_select(&model, &build_features(r, &e.probs))?;
        let decision = gate(select, r.predicted);
        released += usize::from(decision.select);
        w.write_record([
            r.id.clone(),
            r.predicted.to_string(),
            fmt_opt(r.att_sensitivity),
            fmt_opt(r.att_fpr),
            in_ci(&calibration, r).map_or_else(|| "NA".into(), |b| b.to_string()),
            u8::from(decision.select).to_string(),
            decision.released.to_string(),
        ])
        .map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
    create_dir(&out)?;
    write_file(&out.join(DECISIONS_FILE), &bytes)?;
    Ok(GateSummary {
        samples: evals.len(),
        released,
        abstained: evals.len() - released,
    })
}

/// Compares the manifest's attribute metrics with the calibration reference
/// and writes `drift.txt`.
pub fn drift_check(settings: &Settings) -> Result<DriftReport> {
    let manifest = load(settings)?;
    let out = settings.out_dir()?;
    let calibration = CalibrationModel::load(settings.existing("calibration", &settings.calibration)?)?;
    let evals = evaluate_manifest(&manifest, &settings.pipeline())?;
    let window: Vec<_> = evals.into_iter().map(|e| e.report).collect();
    let report = monitor::drift_check(&calibration, &window, &settings.drift_options())?;
    create_dir(&out)?;
    report.save(out.join(DRIFT_FILE))?;
    Ok(report)
}

/// Directory name for one corruption level.
pub fn level_dir_name(level: f64) -> String {
    format!("blur_{level}")
}

/// Blurs every sample image at each configured level, re-runs the net and
/// writes `<out>/blur_<level>/manifest.toml` with fresh tensors and copied
/// masks. Returns the manifest paths.
pub fn corrupt(settings: &Settings) -> Result<Vec<PathBuf>> {
    let manifest = load(settings)?;
    let out = settings.out_dir()?;
    let net = MicroNet::load(settings.existing("net", &settings.net)?)?;
    let opts = settings.pipeline();
    let mut written = Vec::new();
    for &level in &settings.levels {
        let dir = out.join(level_dir_name(level));
        create_dir(&dir.join("masks"))?;
        let mut samples = manifest
            .samples
            .par_iter()
            .map(|rec| {
                let image_ref = rec.image_ref.as_deref().ok_or_else(|| Error::InvalidRecord {
                    id: rec.id.clone(),
                    detail: "no image_ref to corrupt".into(),
                })?;
                let image = gaussian_blur(&read_tensor(manifest.resolve(image_ref))?, level)?;
                let mut out_rec = export_sample(&net, &image, &rec.id, &dir)?;
                out_rec.true_class = rec.true_class;
                if rec.mask_ref.is_some() || opts.masks_dir.is_some() {
                    let src = mask_path(&manifest, rec, &opts)?;
                    let mask_ref = format!("masks/{}.png", rec.id);
                    let dst = dir.join(&mask_ref);
                    fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
                    out_rec.mask_ref = Some(mask_ref);
                }
                Ok(out_rec)
            })
            .collect::<Result<Vec<_>>>()?;
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        let mut derived = DatasetManifest::new(manifest.height, manifest.width, &dir);
        derived.samples = samples;
        let path = dir.join("manifest.toml");
        derived.save(&path)?;
        info!("level {level}: {}", path.display());
        written.push(path);
    }
    Ok(written)
}

/// Writes `<id>.png` and its legend for every sample.
pub fn render_maps(settings: &Settings) -> Result<Vec<PathBuf>> {
    let manifest = load(settings)?;
    let out = settings.out_dir()?;
    let palette = match &settings.palette {
        Some(p) => Palette::load(p)?,
        None => Palette::default(),
    };
    create_dir(&out)?;
    let opts = settings.pipeline();
    let mut paths = manifest
        .samples
        .par_iter()
        .map(|rec| {
            let map = gcapm_for(&manifest, rec, &opts)?;
            let path = out.join(format!("{}.png", rec.id));
            render(&map, &palette, &path)?;
            debug_assert!(legend_path(&path).exists());
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;
    paths.sort();
    Ok(paths)
}
