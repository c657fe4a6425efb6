//! Run configuration: an optional TOML file merged with command-line
//! overrides, then resolved against defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::GateParams;
use crate::gcapm::{WeightMode, DEFAULT_TAU};
use crate::mask::DEFAULT_MASK_THRESHOLD;
use crate::monitor::calibration::DEFAULT_GAMMA;
use crate::monitor::{DriftOptions, Statistic, MIN_RESAMPLES};
use crate::pipeline::PipelineOptions;

pub const DEFAULT_LEVELS: [f64; 5] = [10.0, 20.0, 30.0, 40.0, 50.0];

/// Every field is optional so a file and a set of flags can be layered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub masks_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub gate: Option<PathBuf>,
    pub net: Option<PathBuf>,
    pub palette: Option<PathBuf>,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub levels: Option<Vec<f64>>,
    pub bootstrap: Option<usize>,
    pub seed: Option<u64>,
    pub weights: Option<WeightMode>,
    pub mask_threshold: Option<u8>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub statistic: Option<Statistic>,
    pub bias_offset: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::ManifestParse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.manifest,
            &mut cfg.masks_dir,
            &mut cfg.out,
            &mut cfg.calibration,
            &mut cfg.gate,
            &mut cfg.net,
            &mut cfg.palette,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Fields set in `top` win.
    pub fn overlay(mut self, top: RunConfig) -> RunConfig {
        overlay!(self, top; manifest, masks_dir, out, calibration, gate, net, palette,
            tau, gamma, levels, bootstrap, seed, weights, mask_threshold, alpha,
            lambda, epochs, statistic, bias_offset);
        self
    }

    pub fn resolve(self) -> Result<Settings> {
        let s = Settings {
            manifest: self.manifest,
            masks_dir: self.masks_dir,
            out: self.out,
            calibration: self.calibration,
            gate: self.gate,
            net: self.net,
            palette: self.palette,
            tau: self.tau.unwrap_or(DEFAULT_TAU),
            gamma: self.gamma.unwrap_or(DEFAULT_GAMMA),
            levels: self.levels.unwrap_or_else(|| DEFAULT_LEVELS.to_vec()),
            bootstrap: self.bootstrap.unwrap_or(DriftOptions::default().resamples),
            seed: self.seed.unwrap_or(0),
            weights: self.weights.unwrap_or_default(),
            mask_threshold: self.mask_threshold.unwrap_or(DEFAULT_MASK_THRESHOLD),
            alpha: self.alpha.unwrap_or(DriftOptions::default().alpha),
            lambda: self.lambda.unwrap_or(GateParams::default().lambda),
            epochs: self.epochs.unwrap_or(GateParams::default().epochs),
            statistic: self.statistic.unwrap_or(DriftOptions::default().statistic),
            bias_offset: self.bias_offset.unwrap_or(0.0),
        };
        s.check_ranges()?;
        Ok(s)
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub manifest: Option<PathBuf>,
    pub masks_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub gate: Option<PathBuf>,
    pub net: Option<PathBuf>,
    pub palette: Option<PathBuf>,
    pub tau: f64,
    pub gamma: f64,
    pub levels: Vec<f64>,
    pub bootstrap: usize,
    pub seed: u64,
    pub weights: WeightMode,
    pub mask_threshold: u8,
    pub alpha: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub statistic: Statistic,
    pub bias_offset: f64,
}

impl Settings {
    fn check_ranges(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1)", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if let Some(l) = self.levels.iter().find(|l| !(0.0..=100.0).contains(*l)) {
            return bad(format!("blur level {l} outside [0, 100]"));
        }
        if self.bootstrap < MIN_RESAMPLES {
            return bad(format!("bootstrap {} below {MIN_RESAMPLES}", self.bootstrap));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be positive", self.lambda));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !self.bias_offset.is_finite() {
            return bad("bias offset must be finite".into());
        }
        Ok(())
    }

    /// A required path, checked for existence.
    pub fn existing(&self, what: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        let p = p
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("missing --{what}")))?;
        if !p.exists() {
            return Err(Error::InvalidArgument(format!("{what} {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| Error::InvalidArgument("missing --out".into()))
    }

    pub fn pipeline(&self) -> PipelineOptions {
        PipelineOptions {
            tau: self.tau,
            weights: self.weights,
            mask_threshold: self.mask_threshold,
            masks_dir: self.masks_dir.clone(),
        }
    }

    pub fn gate_params(&self) -> GateParams {
        GateParams {
            lambda: self.lambda,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn drift_options(&self) -> DriftOptions {
        DriftOptions {
            alpha: self.alpha,
            resamples: self.bootstrap,
            seed: self.seed,
            statistic: self.statistic,
        }
    }
}
