//! Offline calibration and runtime monitoring of attribute metrics.

pub mod blur;
pub mod bootstrap;
pub mod calibration;
pub mod distance;
pub mod drift;
pub mod kde;

pub use blur::{gaussian_blur, gaussian_blur_with_scale, DEFAULT_SIGMA_AT_FULL_LEVEL};
pub use bootstrap::{bootstrap_pvalue, bootstrap_pvalues, MIN_RESAMPLES};
pub use calibration::{fit_calibration, in_ci, quantile, CalibrationModel, Interval, ReferencePoint};
pub use distance::{dist_stats, DistStats, Ecdf, Statistic};
pub use drift::{drift_check, DriftOptions, DriftReport, Feature, FeatureDrift};
pub use kde::{kde_density, silverman_bandwidth};
