//! Safety monitoring for image classifiers built on fused class-activation
//! maps.
//!
//! The crate covers the whole offline/runtime loop:
//!
//! - [`tensor`], [`mask`], [`manifest`]: the GCT1 tensor container, lesion
//!   masks and the dataset manifest.
//! - [`autodiff`], [`micronet`]: a tiny conv net with reverse-mode gradients
//!   used to exercise the pipeline without an external model.
//! - [`cam`]: Grad-CAM weights, maps, upsampling and normalization.
//! - [`gcapm`]: per-pixel fusion of all class maps into a global
//!   class-activation probability map.
//! - [`metrics`]: attention sensitivity / FPR against lesion masks and the
//!   attribute-performance correlation analysis.
//! - [`monitor`]: confidence regions, KDE, ECDF distances, permutation
//!   bootstrap and drift checks, Gaussian-blur corruption.
//! - [`gate`]: the linear-SVM meta-classifier deciding release vs abstain.
//! - [`pipeline`], [`workflow`]: per-sample evaluation and the CLI commands.

pub mod autodiff;
pub mod cam;
pub mod config;
pub mod error;
pub mod fixture;
pub mod gate;
pub mod gcapm;
pub mod manifest;
pub mod mask;
pub mod metrics;
pub mod micronet;
pub mod monitor;
pub mod pipeline;
pub mod tensor;
pub mod workflow;

pub use error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
///
/// NaN entries never win. Returns 0 for an empty slice.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::argmax;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }
}
