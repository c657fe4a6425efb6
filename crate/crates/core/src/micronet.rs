//! A fixed conv3x3 -> ReLU -> global-average-pool -> dense classifier.
//!
//! The post-ReLU conv output is the Grad-CAM target layer. Gradients of a
//! class logit with respect to that layer are obtained by a reverse sweep
//! over an [`autodiff::Tape`](crate::autodiff::Tape).

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MicroNet {
    side: usize,
    /// [K, 3, 3]
    conv_weight: Tensor,
    /// [K]
    conv_bias: Tensor,
    /// [C, K]
    dense_weight: Tensor,
    /// [C]
    dense_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Post-ReLU conv output, [K, S-2, S-2].
    pub activations: Tensor,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Parameter listing written next to the tensor files.
#[derive(Debug, Serialize, Deserialize)]
struct NetFile {
    version: u32,
    side: usize,
    filters: usize,
    classes: usize,
    conv_weight: String,
    conv_bias: String,
    dense_weight: String,
    dense_bias: String,
}

struct Graph {
    tape: Tape,
    activations: Var,
    logits: Var,
}

impl MicroNet {
    /// Parameters drawn from U(-0.5, 0.5) with a ChaCha8 stream seeded by `seed`.
    pub fn init(seed: u64, side: usize, filters: usize, classes: usize) -> Result<Self> {
        if side < 5 || filters < 1 || classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "micro net needs S >= 5, K >= 1, C >= 2 (got S={side}, K={filters}, C={classes})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-0.5f32..0.5)).collect() };
        let conv_weight = Tensor::new(vec![filters, KERNEL, KERNEL], draw(filters * KERNEL * KERNEL))?;
        let conv_bias = Tensor::new(vec![filters], draw(filters))?;
        let dense_weight = Tensor::new(vec![classes, filters], draw(classes * filters))?;
        let dense_bias = Tensor::new(vec![classes], draw(classes))?;
        Ok(MicroNet {
            side,
            conv_weight,
            conv_bias,
            dense_weight,
            dense_bias,
        })
    }

    /// Assembles a net from explicit parameter tensors.
    pub fn from_parts(
        side: usize,
        conv_weight: Tensor,
        conv_bias: Tensor,
        dense_weight: Tensor,
        dense_bias: Tensor,
    ) -> Result<Self> {
        if side < 5 || conv_weight.rank() != 3 || dense_weight.rank() != 2 {
            return Err(Error::InvalidArgument("malformed micro net parameters".into()));
        }
        let k = conv_weight.shape()[0];
        let c = dense_weight.shape()[0];
        conv_weight.expect_shape(&[k, KERNEL, KERNEL])?;
        conv_bias.expect_shape(&[k])?;
        dense_weight.expect_shape(&[c, k])?;
        dense_bias.expect_shape(&[c])?;
        if c < 2 {
            return Err(Error::InvalidArgument("micro net needs at least 2 classes".into()));
        }
        Ok(MicroNet {
            side,
            conv_weight,
            conv_bias,
            dense_weight,
            dense_bias,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn filters(&self) -> usize {
        self.conv_weight.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.dense_weight.shape()[0]
    }

    /// Spatial side of the target layer.
    pub fn feature_side(&self) -> usize {
        self.side - KERNEL + 1
    }

    pub fn conv_weight(&self) -> &Tensor {
        &self.conv_weight
    }

    pub fn conv_bias(&self) -> &Tensor {
        &self.conv_bias
    }

    pub fn dense_weight(&self) -> &Tensor {
        &self.dense_weight
    }

    pub fn dense_bias(&self) -> &Tensor {
        &self.dense_bias
    }

    pub fn dense_weight_mut(&mut self) -> &mut Tensor {
        &mut self.dense_weight
    }

    pub fn conv_weight_mut(&mut self) -> &mut Tensor {
        &mut self.conv_weight
    }

    pub fn conv_bias_mut(&mut self) -> &mut Tensor {
        &mut self.conv_bias
    }

    pub fn dense_bias_mut(&mut self) -> &mut Tensor {
        &mut self.dense_bias
    }

    fn build(&self, image: &Tensor) -> Result<Graph> {
        image.expect_shape(&[self.side, self.side])?;
        let mut tape = Tape::new();
        let to64 = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let x = tape.leaf(image.shape().to_vec(), to64(image))?;
        let kw = tape.leaf(self.conv_weight.shape().to_vec(), to64(&self.conv_weight))?;
        let kb = tape.leaf(self.conv_bias.shape().to_vec(), to64(&self.conv_bias))?;
        let dw = tape.leaf(self.dense_weight.shape().to_vec(), to64(&self.dense_weight))?;
        let db = tape.leaf(self.dense_bias.shape().to_vec(), to64(&self.dense_bias))?;
        let conv = tape.conv2d_valid(x, kw, kb)?;
        let activations = tape.relu(conv);
        let pooled = tape.channel_mean(activations);
        let logits = tape.affine(dw, pooled, db)?;
        Ok(Graph {
            tape,
            activations,
            logits,
        })
    }

    pub fn forward(&self, image: &Tensor) -> Result<ForwardTrace> {
        let g = self.build(image)?;
        let act = g.tape.value(g.activations);
        let activations = Tensor::new(
            g.tape.shape(g.activations).to_vec(),
            act.iter().map(|&v| v as f32).collect(),
        )?;
        let logits = g.tape.value(g.logits).to_vec();
        let probs = softmax(&logits);
        Ok(ForwardTrace {
            activations,
            logits,
            probs,
        })
    }

    /// Gradient of logit `class` with respect to the post-ReLU activations,
    /// shaped [K, S-2, S-2].
    pub fn backward_class(&self, image: &Tensor, class: usize) -> Result<Tensor> {
        if class >= self.classes() {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for {} classes",
                self.classes()
            )));
        }
        let mut g = self.build(image)?;
        let out = g.tape.pick(g.logits, class)?;
        let grads = g.tape.backward(out)?;
        Tensor::new(
            g.tape.shape(g.activations).to_vec(),
            grads.wrt(g.activations).iter().map(|&v| v as f32).collect(),
        )
    }

    /// Logits recomputed from a target-layer activation tensor (GAP -> dense).
    pub fn head_logits(&self, activations: &[f64]) -> Vec<f64> {
        let k = self.filters();
        let per = activations.len() / k;
        let pooled: Vec<f64> = activations
            .chunks_exact(per)
            .map(|ch| ch.iter().sum::<f64>() / per as f64)
            .collect();
        let w = self.dense_weight.data();
        let b = self.dense_bias.data();
        (0..self.classes())
            .map(|c| b[c] as f64 + (0..k).map(|j| w[c * k + j] as f64 * pooled[j]).sum::<f64>())
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let listing = NetFile {
            version: 1,
            side: self.side,
            filters: self.filters(),
            classes: self.classes(),
            conv_weight: "conv_weight.gct".into(),
            conv_bias: "conv_bias.gct".into(),
            dense_weight: "dense_weight.gct".into(),
            dense_bias: "dense_bias.gct".into(),
        };
        write_tensor(&self.conv_weight, dir.join(&listing.conv_weight))?;
        write_tensor(&self.conv_bias, dir.join(&listing.conv_bias))?;
        write_tensor(&self.dense_weight, dir.join(&listing.dense_weight))?;
        write_tensor(&self.dense_bias, dir.join(&listing.dense_bias))?;
        let text = toml::to_string(&listing).map_err(|e| Error::Serialize(e.to_string()))?;
        let path = dir.join("net.toml");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads a net from a directory containing `net.toml`, or from the
    /// `net.toml` path itself.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let listing_path = if path.is_dir() { path.join("net.toml") } else { path.to_path_buf() };
        let dir = listing_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(&listing_path).map_err(|e| Error::io(&listing_path, e))?;
        let listing: NetFile = toml::from_str(&text).map_err(|e| Error::ManifestParse {
            path: listing_path.clone(),
            detail: e.to_string(),
        })?;
        let net = MicroNet::from_parts(
            listing.side,
            read_tensor(dir.join(&listing.conv_weight))?,
            read_tensor(dir.join(&listing.conv_bias))?,
            read_tensor(dir.join(&listing.dense_weight))?,
            read_tensor(dir.join(&listing.dense_bias))?,
        )?;
        if net.filters() != listing.filters || net.classes() != listing.classes {
            return Err(Error::InvalidArgument(format!(
                "{} disagrees with its parameter tensors",
                listing_path.display()
            )));
        }
        Ok(net)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Central-difference check of [`MicroNet::backward_class`].
///
/// Each activation entry is perturbed by ±`eps` and the head is re-run from
/// the activations. Returns the maximum over entries of
/// `|analytic - numeric| / (|numeric| + 1e-8)`.
pub fn finite_diff_check(net: &MicroNet, image: &Tensor, class: usize, eps: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let trace = net.forward(image)?;
    let analytic = net.backward_class(image, class)?;
    let mut act: Vec<f64> = trace.activations.data().iter().map(|&v| v as f64).collect();
    let mut worst = 0.0f64;
    for i in 0..act.len() {
        let orig = act[i];
        act[i] = orig + eps;
        let up = net.head_logits(&act)[class];
        act[i] = orig - eps;
        let down = net.head_logits(&act)[class];
        act[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic.data()[i] as f64 - numeric).abs() / (numeric.abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
