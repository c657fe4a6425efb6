//! Isotropic Gaussian kernel density in two dimensions.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// `(1 / (n 2π h²)) Σ exp(-|q - x_i|² / (2h²))`.
pub fn kde_density(points: &[[f64; 2]], bandwidth: f64, query: [f64; 2]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InsufficientData("kde needs at least one point".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument("bandwidth must be positive".into()));
    }
    let h2 = bandwidth * bandwidth;
    let sum: f64 = points
        .iter()
        .map(|p| {
            let dx = query[0] - p[0];
            let dy = query[1] - p[1];
            (-(dx * dx + dy * dy) / (2.0 * h2)).exp()
        })
        .sum();
    Ok(sum / (points.len() as f64 * 2.0 * PI * h2))
}

/// Silverman's rule of thumb, `0.9 · min(σ, IQR/1.34) · n^(-1/5)`.
///
/// Falls back to σ when the IQR is zero and to `1e-3` for constant data so
/// the result is always positive.
pub fn silverman_bandwidth(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData("bandwidth needs at least two values".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = super::quantile(&sorted, 0.75) - super::quantile(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        _ => return Ok(1e-3),
    };
    Ok(0.9 * spread * n.powf(-0.2))
}
