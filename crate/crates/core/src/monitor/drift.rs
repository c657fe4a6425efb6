//! Runtime drift check of the attribute triple against the offline
//! reference sample.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bootstrap::bootstrap_pvalues;
use super::calibration::{CalibrationModel, ReferencePoint};
use super::distance::{dist_stats, DistStats, Statistic};
use crate::error::{Error, Result};
use crate::metrics::AttrReport;

pub const MIN_WINDOW: usize = 10;
pub const DRIFT_REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Sensitivity,
    Fpr,
    MaxProb,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Sensitivity, Feature::Fpr, Feature::MaxProb];

    fn of_reference(self, p: &ReferencePoint) -> f64 {
        match self {
            Feature::Sensitivity => p.att_sensitivity,
            Feature::Fpr => p.att_fpr,
            Feature::MaxProb => p.max_prob,
        }
    }

    fn of_report(self, r: &AttrReport) -> Option<f64> {
        match self {
            Feature::Sensitivity => r.att_sensitivity,
            Feature::Fpr => r.att_fpr,
            Feature::MaxProb => Some(r.max_prob),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftOptions {
    pub alpha: f64,
    pub resamples: usize,
    pub seed: u64,
    /// Statistic whose p-value decides the alarm.
    pub statistic: Statistic,
}

impl Default for DriftOptions {
    fn default() -> Self {
        DriftOptions {
            alpha: 0.05,
            resamples: 999,
            seed: 0,
            statistic: Statistic::Ks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDrift {
    pub feature: Feature,
    /// Window values that entered the test (undefined metrics are skipped).
    pub used: usize,
    pub stats: DistStats,
    pub p_values: DistStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub version: u32,
    pub window_size: usize,
    pub alpha: f64,
    pub statistic: Statistic,
    pub resamples: usize,
    pub seed: u64,
    pub alarm: bool,
    pub features: Vec<FeatureDrift>,
}

impl DriftReport {
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let r: DriftReport = toml::from_str(text).map_err(|e| Error::ManifestParse {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        if r.version != DRIFT_REPORT_VERSION {
            return Err(Error::UnsupportedVersion(r.version));
        }
        Ok(r)
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
}

/// Tests each feature of `window` against the calibration reference.
///
/// The alarm fires when the chosen statistic's p-value for any feature is
/// below `alpha / k`, `k` being the number of features tested. A feature
/// with fewer than [`MIN_WINDOW`] defined values in the window is skipped.
pub fn drift_check(model: &CalibrationModel, window: &[AttrReport], opts: &DriftOptions) -> Result<DriftReport> {
    if window.len() < MIN_WINDOW {
        return Err(Error::InsufficientData(format!(
            "runtime window of {} samples, need at least {MIN_WINDOW}",
            window.len()
        )));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1)", opts.alpha)));
    }
    if model.reference.is_empty() {
        return Err(Error::InsufficientData("calibration reference is empty".into()));
    }
    let mut features = Vec::new();
    for (i, feature) in Feature::ALL.into_iter().enumerate() {
        let runtime: Vec<f64> = window.iter().filter_map(|r| feature.of_report(r)).collect();
        if runtime.len() < MIN_WINDOW {
            log::warn!(
                "skipping {feature:?}: {} defined values in window of {}",
                runtime.len(),
                window.len()
            );
            continue;
        }
        let reference = model.reference_feature(|p| feature.of_reference(p));
        let stats = dist_stats(&reference, &runtime)?;
        let seed = opts.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
        let p_values = bootstrap_pvalues(&reference, &runtime, opts.resamples, seed)?;
        features.push(FeatureDrift {
            feature,
            used: runtime.len(),
            stats,
            p_values,
        });
    }
    if features.is_empty() {
        return Err(Error::InsufficientData("no feature has enough defined values".into()));
    }
    let threshold = opts.alpha / features.len() as f64;
    let alarm = features.iter().any(|f| f.p_values.get(opts.statistic) < threshold);
    Ok(DriftReport {
        version: DRIFT_REPORT_VERSION,
        window_size: window.len(),
        alpha: opts.alpha,
        statistic: opts.statistic,
        resamples: opts.resamples,
        seed: opts.seed,
        alarm,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor::calibration::fit_calibration;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn report(i: usize, sens: f64, fpr: f64, max_prob: f64) -> AttrReport {
        AttrReport {
            id: format!("s{i:04}"),
            att_sensitivity: Some(sens),
            att_fpr: Some(fpr),
            mean_iou: None,
            lesion_ratio: 0.2,
            predicted: 0,
            truth: Some(0),
            correct: Some(true),
            max_prob,
        }
    }

    fn population(n: usize, sens_shift: f64, seed: u64) -> Vec<AttrReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Normal::new(0.6 + sens_shift * 0.1, 0.1).unwrap();
        let f = Normal::new(0.1, 0.03).unwrap();
        (0..n)
            .map(|i| report(i, s.sample(&mut rng), f.sample(&mut rng), rng.random_range(0.5..1.0)))
            .collect()
    }

    fn resample(model: &CalibrationModel, n: usize, rng: &mut ChaCha8Rng) -> Vec<AttrReport> {
        (0..n)
            .map(|i| {
                let p = model.reference[rng.random_range(0..model.reference.len())];
                report(i, p.att_sensitivity, p.att_fpr, p.max_prob)
            })
            .collect()
    }

    #[test]
    fn small_window_errors() {
        let model = fit_calibration(&population(100, 0.0, 1), 0.95).unwrap();
        let window = population(5, 0.0, 2);
        assert!(matches!(
            drift_check(&model, &window, &DriftOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn null_windows_rarely_alarm() {
        let model = fit_calibration(&population(300, 0.0, 1), 0.95).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut quiet = 0;
        for trial in 0..20 {
            let window = resample(&model, 40, &mut rng);
            let opts = DriftOptions {
                resamples: 199,
                seed: trial,
                ..DriftOptions::default()
            };
            quiet += usize::from(!drift_check(&model, &window, &opts).unwrap().alarm);
        }
        assert!(quiet >= 18, "{quiet} quiet windows of 20");
    }

    #[test]
    fn shifted_sensitivity_alarms() {
        let model = fit_calibration(&population(300, 0.0, 1), 0.95).unwrap();
        let window = population(40, -3.0, 9);
        let opts = DriftOptions {
            resamples: 199,
            ..DriftOptions::default()
        };
        let r = drift_check(&model, &window, &opts).unwrap();
        assert!(r.alarm);
        assert_eq!(r.features.len(), 3);
    }

    #[test]
    fn undefined_metrics_are_skipped_per_feature() {
        let model = fit_calibration(&population(100, 0.0, 1), 0.95).unwrap();
        let mut window = population(20, 0.0, 3);
        for r in window.iter_mut().take(15) {
            r.att_fpr = None;
        }
        let opts = DriftOptions {
            resamples: 100,
            ..DriftOptions::default()
        };
        let r = drift_check(&model, &window, &opts).unwrap();
        let tested: Vec<Feature> = r.features.iter().map(|f| f.feature).collect();
        assert_eq!(tested, vec![Feature::Sensitivity, Feature::MaxProb]);
    }

    #[test]
    fn report_text_round_trip() {
        let model = fit_calibration(&population(60, 0.0, 1), 0.95).unwrap();
        let window = population(25, 0.5, 4);
        let opts = DriftOptions {
            resamples: 100,
            seed: 5,
            statistic: Statistic::Wasserstein,
            ..DriftOptions::default()
        };
        let r = drift_check(&model, &window, &opts).unwrap();
        let back = DriftReport::from_text(&r.to_text().unwrap(), Path::new("d")).unwrap();
        assert_eq!(back, r);
    }
}
