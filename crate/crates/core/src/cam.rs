//! Grad-CAM: per-filter importance weights and the rectified weighted map.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A single-class activation map, row-major, values >= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl Cam {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width],
                actual: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("cam values must be finite and nonnegative".into()));
        }
        Ok(Cam { height, width, values })
    }

    /// Interprets a rank-2 tensor as a precomputed map.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::InvalidArgument(format!("cam tensor must be rank 2, got {:?}", t.shape())));
        }
        Cam::new(t.shape()[0], t.shape()[1], t.data().to_vec())
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Cam::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn scaled(&self, s: f32) -> Cam {
        Cam {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

/// Per-filter importance weights for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaWeights(Vec<f64>);

impl AlphaWeights {
    pub fn new(weights: Vec<f64>) -> Self {
        AlphaWeights(weights)
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

/// Global average pool of a [K, H, W] gradient tensor over its spatial axes.
pub fn alpha_weights(grads: &Tensor) -> Result<AlphaWeights> {
    if grads.rank() != 3 {
        return Err(Error::InvalidArgument(format!(
            "gradient tensor must be rank 3, got {:?}",
            grads.shape()
        )));
    }
    let per = grads.shape()[1] * grads.shape()[2];
    Ok(AlphaWeights(
        grads
            .data()
            .chunks_exact(per)
            .map(|ch| ch.iter().map(|&g| g as f64).sum::<f64>() / per as f64)
            .collect(),
    ))
}

/// `max(0, Σ_k alpha_k · A_k)` at every spatial position.
pub fn grad_cam(activations: &Tensor, alpha: &AlphaWeights) -> Result<Cam> {
    if activations.rank() != 3 || activations.shape()[0] != alpha.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![alpha.len()],
            actual: activations.shape().to_vec(),
        });
    }
    let (h, w) = (activations.shape()[1], activations.shape()[2]);
    let per = h * w;
    let data = activations.data();
    let values = (0..per)
        .map(|p| {
            let s: f64 = alpha
                .as_slice()
                .iter()
                .enumerate()
                .map(|(k, &a)| a * data[k * per + p] as f64)
                .sum();
            s.max(0.0) as f32
        })
        .collect();
    Cam::new(h, w, values)
}

/// Corner-aligned bilinear upsampling: output corners coincide with input
/// corners. Downsampling is refused.
pub fn upsample_bilinear(cam: &Cam, out_h: usize, out_w: usize) -> Result<Cam> {
    if out_h < cam.height || out_w < cam.width {
        return Err(Error::InvalidArgument(format!(
            "cannot downsample {}x{} to {out_h}x{out_w}",
            cam.height, cam.width
        )));
    }
    let coords = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                if n_in == 1 || n_out == 1 {
                    return (0, 0, 0.0);
                }
                let src = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                let lo = (src.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = coords(cam.height, out_h);
    let cols = coords(cam.width, out_w);
    let mut values = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let a = cam.get(r0, c0) as f64;
            let b = cam.get(r0, c1) as f64;
            let c = cam.get(r1, c0) as f64;
            let d = cam.get(r1, c1) as f64;
            let top = a + (b - a) * fx;
            let bottom = c + (d - c) * fx;
            values.push((top + (bottom - top) * fy) as f32);
        }
    }
    Cam::new(out_h, out_w, values)
}

/// Rescales to [0, 1]. A constant map (including all-zero) becomes all zeros.
pub fn minmax_normalize(cam: &Cam) -> Cam {
    let (lo, hi) = cam
        .values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let values = if hi > lo {
        let span = (hi - lo) as f64;
        cam.values
            .iter()
            .map(|&v| (((v - lo) as f64) / span).clamp(0.0, 1.0) as f32)
            .collect()
    } else {
        vec![0.0; cam.values.len()]
    };
    Cam {
        height: cam.height,
        width: cam.width,
        values,
    }
}
