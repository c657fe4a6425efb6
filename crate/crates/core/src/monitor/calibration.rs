//! Confidence intervals over the attribute metrics of correct offline
//! predictions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kde::silverman_bandwidth;
use crate::error::{Error, Result};
use crate::metrics::AttrReport;

pub const CALIBRATION_VERSION: u32 = 1;
pub const MIN_CALIBRATION_SAMPLES: usize = 20;
pub const DEFAULT_GAMMA: f64 = 0.95;

/// Linear-interpolated order statistic of an ascending sample (the usual
/// "type 7" estimator): `h = (n - 1) p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// One offline sample kept as the drift baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub att_sensitivity: f64,
    pub att_fpr: f64,
    pub max_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub version: u32,
    pub gamma: f64,
    /// Number of correct predictions the intervals were fitted on.
    pub fitted_on: usize,
    pub att_sensitivity: Interval,
    pub att_fpr: Interval,
    /// Silverman bandwidths for (sensitivity, fpr) over the fitted sample.
    pub bandwidths: [f64; 2],
    pub reference: Vec<ReferencePoint>,
}

impl CalibrationModel {
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let m: CalibrationModel = toml::from_str(text).map_err(|e| Error::ManifestParse {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        if m.version != CALIBRATION_VERSION {
            return Err(Error::UnsupportedVersion(m.version));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn reference_feature(&self, f: impl Fn(&ReferencePoint) -> f64) -> Vec<f64> {
        self.reference.iter().map(f).collect()
    }
}

/// Fits per-metric `gamma` intervals on the correct predictions among
/// `offline`, bounded by the `(1-γ)/2` and `1-(1-γ)/2` quantiles.
///
/// Every offline report with both metrics defined, correct or not, is kept
/// as the drift reference.
pub fn fit_calibration(offline: &[AttrReport], gamma: f64) -> Result<CalibrationModel> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside (0, 1)")));
    }
    let defined = |r: &&AttrReport| r.att_sensitivity.is_some() && r.att_fpr.is_some();
    let correct: Vec<&AttrReport> = offline
        .iter()
        .filter(|r| r.correct == Some(true))
        .filter(defined)
        .collect();
    if correct.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} correct predictions with defined metrics, need {MIN_CALIBRATION_SAMPLES}",
            correct.len()
        )));
    }
    let mut sens: Vec<f64> = correct.iter().filter_map(|r| r.att_sensitivity).collect();
    let mut fpr: Vec<f64> = correct.iter().filter_map(|r| r.att_fpr).collect();
    sens.sort_by(f64::total_cmp);
    fpr.sort_by(f64::total_cmp);
    let tail = (1.0 - gamma) / 2.0;
    let interval = |s: &[f64]| Interval {
        lower: quantile(s, tail),
        upper: quantile(s, 1.0 - tail),
    };
    let reference = offline
        .iter()
        .filter(defined)
        .map(|r| ReferencePoint {
            att_sensitivity: r.att_sensitivity.unwrap_or_default(),
            att_fpr: r.att_fpr.unwrap_or_default(),
            max_prob: r.max_prob,
        })
        .collect();
    Ok(CalibrationModel {
        version: CALIBRATION_VERSION,
        gamma,
        fitted_on: correct.len(),
        att_sensitivity: interval(&sens),
        att_fpr: interval(&fpr),
        bandwidths: [silverman_bandwidth(&sens)?, silverman_bandwidth(&fpr)?],
        reference,
    })
}

/// Whether both metrics fall inside their intervals (bounds inclusive).
/// `None` when a metric is undefined.
pub fn in_ci(model: &CalibrationModel, report: &AttrReport) -> Option<bool> {
    let s = report.att_sensitivity?;
    let f = report.att_fpr?;
    Some(model.att_sensitivity.contains(s) && model.att_fpr.contains(f))
}
