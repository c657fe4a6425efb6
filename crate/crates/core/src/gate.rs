//! Selective prediction: a linear SVM over (class probabilities, max
//! probability, attention sensitivity, attention FPR) decides whether the
//! base prediction is released or handed to a human.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::AttrReport;

pub const GATE_VERSION: u32 = 1;
/// Extra features after the class probabilities.
pub const EXTRA_FEATURES: usize = 3;

/// Gate input: `C` probabilities, then max probability, sensitivity, FPR.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub sens_imputed: bool,
    pub fpr_imputed: bool,
}

impl FeatureVector {
    pub fn num_classes(&self) -> usize {
        self.values.len().saturating_sub(EXTRA_FEATURES)
    }
}

/// Assembles the gate features; an undefined metric becomes 0 and is
/// flagged.
pub fn build_features(report: &AttrReport, probs: &[f64]) -> FeatureVector {
    let max_prob = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut values = probs.to_vec();
    values.push(max_prob);
    values.push(report.att_sensitivity.unwrap_or(0.0));
    values.push(report.att_fpr.unwrap_or(0.0));
    FeatureVector {
        values,
        sens_imputed: report.att_sensitivity.is_none(),
        fpr_imputed: report.att_fpr.is_none(),
    }
}

/// One row of an exported feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub features: FeatureVector,
    /// Whether the base prediction was correct, when known.
    pub label: Option<bool>,
}

fn feature_header(classes: usize) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend((0..classes).map(|c| format!("p{c}")));
    h.extend(
        ["max_prob", "att_sensitivity", "att_fpr", "sens_imputed", "fpr_imputed", "correct"]
            .map(String::from),
    );
    h
}

pub fn write_features_csv<W: Write>(rows: &[FeatureRow], classes: usize, out: W) -> Result<()> {
    let ser = |e: csv::Error| Error::Serialize(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_header(classes)).map_err(ser)?;
    for r in rows {
        if r.features.num_classes() != classes {
            return Err(Error::InvalidRecord {
                id: r.id.clone(),
                detail: format!("{} features for {classes} classes", r.features.values.len()),
            });
        }
        let mut rec = vec![r.id.clone()];
        rec.extend(r.features.values.iter().map(f64::to_string));
        rec.push(r.features.sens_imputed.to_string());
        rec.push(r.features.fpr_imputed.to_string());
        rec.push(r.label.map_or_else(|| "NA".into(), |l| l.to_string()));
        w.write_record(rec).map_err(ser)?;
    }
    w.flush().map_err(|e| Error::Serialize(e.to_string()))
}

pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<FeatureRow>> {
    let bad = |e: String| Error::Serialize(format!("features csv: {e}"));
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < 1 + EXTRA_FEATURES + 3 + 2 {
        return Err(bad(format!("{} columns", header.len())));
    }
    let classes = header.len() - 1 - EXTRA_FEATURES - 3;
    if header.iter().ne(feature_header(classes).iter().map(String::as_str)) {
        return Err(bad("unexpected header".into()));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let values = (1..=classes + EXTRA_FEATURES)
            .map(|i| rec[i].parse::<f64>().map_err(|e| bad(format!("{:?}: {e}", &rec[i]))))
            .collect::<Result<Vec<_>>>()?;
        let flag = |s: &str| s.parse::<bool>().map_err(|e| bad(format!("{s:?}: {e}")));
        let n = rec.len();
        rows.push(FeatureRow {
            id: rec[0].to_string(),
            features: FeatureVector {
                values,
                sens_imputed: flag(&rec[n - 3])?,
                fpr_imputed: flag(&rec[n - 2])?,
            },
            label: match &rec[n - 1] {
                "NA" => None,
                s => Some(flag(s)?),
            },
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams {
            lambda: 1e-3,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub version: u32,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Added to the margin before thresholding; positive values release more.
    #[serde(default)]
    pub bias_offset: f64,
}

impl GateModel {
    pub fn num_classes(&self) -> usize {
        self.weights.len().saturating_sub(EXTRA_FEATURES)
    }

    /// `w · z + b + offset` with `z` the standardized features.
    pub fn margin(&self, f: &FeatureVector) -> Result<f64> {
        if f.values.len() != self.weights.len() {
            return Err(Error::InvalidArgument(format!(
                "gate expects {} features, got {}",
                self.weights.len(),
                f.values.len()
            )));
        }
        let dot: f64 = f
            .values
            .iter()
            .zip(&self.weights)
            .zip(self.means.iter().zip(&self.stds))
            .map(|((x, w), (m, s))| w * (x - m) / s)
            .sum();
        Ok(dot + self.bias + self.bias_offset)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let m: GateModel = toml::from_str(text).map_err(|e| Error::ManifestParse {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        if m.version != GATE_VERSION {
            return Err(Error::UnsupportedVersion(m.version));
        }
        let d = m.weights.len();
        if m.means.len() != d || m.stds.len() != d || m.stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::ManifestParse {
                path: origin.to_path_buf(),
                detail: "inconsistent standardization statistics".into(),
            });
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
}

/// Standard deviations at or below this are treated as a constant feature.
const CONSTANT_STD: f64 = 1e-12;

/// Trains the gate with Pegasos-style subgradient descent on the hinge loss
/// plus `λ/2 ‖(w, b)‖²`.
///
/// `labels[i]` is true when the base prediction of sample `i` was correct.
/// Features are z-scored on the training set; the bias rides along as a
/// constant feature. Sample order in epoch `e` is a ChaCha shuffle on stream
/// `e` of `seed`.
pub fn fit_gate(features: &[FeatureVector], labels: &[bool], params: &GateParams) -> Result<GateModel> {
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature vectors for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives < 2 || labels.len() - positives < 2 {
        return Err(Error::InsufficientData(format!(
            "gate training needs at least 2 samples of each label, got {positives} correct and {} incorrect",
            labels.len() - positives
        )));
    }
    if !(params.lambda > 0.0 && params.lambda.is_finite()) || params.epochs == 0 {
        return Err(Error::InvalidArgument("lambda must be positive and epochs nonzero".into()));
    }
    let d = features[0].values.len();
    if let Some(f) = features.iter().find(|f| f.values.len() != d) {
        return Err(Error::InvalidArgument(format!("feature length {} differs from {d}", f.values.len())));
    }
    let n = features.len() as f64;
    let mut means = vec![0.0; d];
    for f in features {
        for (m, x) in means.iter_mut().zip(&f.values) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; d];
    for f in features {
        for ((s, x), m) in stds.iter_mut().zip(&f.values).zip(&means) {
            *s += (x - m) * (x - m);
        }
    }
    let constant: Vec<bool> = stds.iter().map(|s| (s / n).sqrt() <= CONSTANT_STD).collect();
    for (s, &c) in stds.iter_mut().zip(&constant) {
        *s = if c { 1.0 } else { (*s / n).sqrt() };
    }

    let rows: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let mut z: Vec<f64> = f
                .values
                .iter()
                .zip(means.iter().zip(&stds))
                .zip(&constant)
                .map(|((x, (m, s)), &c)| if c { 0.0 } else { (x - m) / s })
                .collect();
            z.push(1.0);
            z
        })
        .collect();
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();

    let lambda = params.lambda;
    let radius = 1.0 / lambda.sqrt();
    let mut w = vec![0.0f64; d + 1];
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut t = 0u64;
    for epoch in 0..params.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &rows[i];
            let y = ys[i];
            let margin = y * w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (v, xi) in w.iter_mut().zip(x) {
                    *v += eta * y * xi;
                }
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    let bias = w.pop().unwrap_or(0.0);
    for (v, &c) in w.iter_mut().zip(&constant) {
        if c {
            *v = 0.0;
        }
    }
    Ok(GateModel {
        version: GATE_VERSION,
        weights: w,
        bias,
        means,
        stds,
        lambda,
        epochs: params.epochs,
        seed: params.seed,
        bias_offset: 0.0,
    })
}

/// Select (release) iff the margin is nonnegative.
pub fn predict_select(model: &GateModel, f: &FeatureVector) -> Result<bool> {
    Ok(model.margin(f)? >= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Release {
    Class(usize),
    Abstain,
}

impl fmt::Display for Release {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Release::Class(c) => write!(f, "{c}"),
            Release::Abstain => f.write_str("HUMAN_REVIEW"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GateDecision {
    pub select: bool,
    pub released: Release,
}

pub fn gate(select: bool, predicted_class: usize) -> GateDecision {
    GateDecision {
        select,
        released: if select {
            Release::Class(predicted_class)
        } else {
            Release::Abstain
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateEvaluation {
    /// Fraction of base-correct samples that were released.
    pub acc_on_accurate: Option<f64>,
    /// Fraction of base-incorrect samples that were held back.
    pub acc_on_inaccurate: Option<f64>,
    /// Base accuracy among released samples.
    pub released_accuracy: Option<f64>,
    pub base_accuracy: Option<f64>,
    pub released: usize,
    pub total: usize,
}

/// Scores the gate on samples whose base correctness is known.
pub fn evaluate_gate(model: &GateModel, samples: &[(FeatureVector, bool)]) -> Result<GateEvaluation> {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (f, correct) in samples {
        let select = predict_select(model, f)?;
        if *correct {
            pos += 1;
            tp += usize::from(select);
        } else {
            neg += 1;
            tn += usize::from(!select);
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let released = tp + (neg - tn);
    Ok(GateEvaluation {
        acc_on_accurate: ratio(tp, pos),
        acc_on_inaccurate: ratio(tn, neg),
        released_accuracy: ratio(tp, released),
        base_accuracy: ratio(pos, pos + neg),
        released,
        total: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn report(sens: Option<f64>, fpr: Option<f64>) -> AttrReport {
        AttrReport {
            id: "x".into(),
            att_sensitivity: sens,
            att_fpr: fpr,
            mean_iou: None,
            lesion_ratio: 0.1,
            predicted: 1,
            truth: None,
            correct: None,
            max_prob: 0.5,
        }
    }

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            values,
            sens_imputed: false,
            fpr_imputed: false,
        }
    }

    /// Two Gaussian clusters in the sensitivity/FPR features, 2 sd apart
    /// per axis, with noise-only probability features.
    fn clusters(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut fs = Vec::new();
        let mut ls = Vec::new();
        for i in 0..n {
            let good = i % 2 == 0;
            let p: f64 = rng.random_range(0.4..0.9);
            let (s, f) = if good { (0.8, 0.1) } else { (0.4, 0.3) };
            fs.push(fv(vec![
                p,
                1.0 - p,
                p,
                s + noise.sample(&mut rng),
                f + noise.sample(&mut rng),
            ]));
            ls.push(good);
        }
        (fs, ls)
    }

    #[test]
    fn feature_assembly() {
        let f = build_features(&report(Some(0.8), Some(0.1)), &[0.2, 0.5, 0.3]);
        assert_eq!(f.values, vec![0.2, 0.5, 0.3, 0.5, 0.8, 0.1]);
        assert!(!f.sens_imputed && !f.fpr_imputed);
        let f = build_features(&report(None, Some(0.1)), &[0.2, 0.8]);
        assert_eq!(f.values[3], 0.0);
        assert!(f.sens_imputed && !f.fpr_imputed);
    }

    #[test]
    fn features_csv_round_trip() {
        let rows = vec![
            FeatureRow {
                id: "a".into(),
                features: build_features(&report(Some(1.0 / 3.0), Some(0.1)), &[0.1 + 0.2, 0.7]),
                label: Some(true),
            },
            FeatureRow {
                id: "b".into(),
                features: build_features(&report(None, None), &[0.5, 0.5]),
                label: None,
            },
        ];
        let mut buf = Vec::new();
        write_features_csv(&rows, 2, &mut buf).unwrap();
        assert_eq!(read_features_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn separable_clusters_are_learned() {
        let (fs, ls) = clusters(200, 3);
        let m = fit_gate(&fs, &ls, &GateParams::default()).unwrap();
        let hits = fs
            .iter()
            .zip(&ls)
            .filter(|(f, &l)| predict_select(&m, f).unwrap() == l)
            .count();
        assert!(hits as f64 / 200.0 >= 0.99, "{hits}/200");
    }

    #[test]
    fn flipped_labels_negate_the_model() {
        let (fs, ls) = clusters(100, 4);
        let flipped: Vec<bool> = ls.iter().map(|l| !l).collect();
        let m = fit_gate(&fs, &ls, &GateParams::default()).unwrap();
        let f = fit_gate(&fs, &flipped, &GateParams::default()).unwrap();
        for (a, b) in m.weights.iter().zip(&f.weights) {
            assert_eq!(*a, -*b);
        }
        assert_eq!(m.bias, -f.bias);
        for x in &fs {
            if m.margin(x).unwrap() != 0.0 {
                assert_ne!(predict_select(&m, x).unwrap(), predict_select(&f, x).unwrap());
            }
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let (fs, ls) = clusters(80, 5);
        let p = GateParams { seed: 9, ..GateParams::default() };
        assert_eq!(fit_gate(&fs, &ls, &p).unwrap(), fit_gate(&fs, &ls, &p).unwrap());
    }

    fn fixed(bias: f64) -> GateModel {
        GateModel {
            version: GATE_VERSION,
            weights: vec![0.0; 5],
            bias,
            means: vec![0.0; 5],
            stds: vec![1.0; 5],
            lambda: 1e-3,
            epochs: 1,
            seed: 0,
            bias_offset: 0.0,
        }
    }

    #[test]
    fn fixed_models() {
        let (fs, _) = clusters(20, 6);
        for f in &fs {
            assert!(predict_select(&fixed(1.0), f).unwrap());
            assert!(!predict_select(&fixed(-1.0), f).unwrap());
            assert!(predict_select(&fixed(0.0), f).unwrap());
        }
        let mut shifted = fixed(-1.0);
        shifted.bias_offset = 1.5;
        assert!(predict_select(&shifted, &fs[0]).unwrap());
    }

    #[test]
    fn constant_features_get_zero_weight() {
        let (mut fs, ls) = clusters(60, 7);
        for f in &mut fs {
            f.values[1] = 0.25;
        }
        let m = fit_gate(&fs, &ls, &GateParams::default()).unwrap();
        assert_eq!(m.weights[1], 0.0);
        assert_eq!(m.stds[1], 1.0);
    }

    #[test]
    fn affine_feature_transform_leaves_predictions() {
        let (fs, ls) = clusters(120, 8);
        let base = fit_gate(&fs, &ls, &GateParams::default()).unwrap();
        let moved: Vec<FeatureVector> = fs
            .iter()
            .map(|f| {
                let mut g = f.clone();
                g.values[3] = 3.0 * g.values[3] - 2.0;
                g.values[4] = 0.5 * g.values[4] + 7.0;
                g
            })
            .collect();
        let m2 = fit_gate(&moved, &ls, &GateParams::default()).unwrap();
        for (f, g) in fs.iter().zip(&moved) {
            assert_eq!(predict_select(&base, f).unwrap(), predict_select(&m2, g).unwrap());
        }
    }

    #[test]
    fn single_class_training_errors() {
        let (fs, _) = clusters(10, 9);
        let mut ls = vec![true; 10];
        assert!(matches!(fit_gate(&fs, &ls, &GateParams::default()), Err(Error::InsufficientData(_))));
        ls[0] = false;
        assert!(fit_gate(&fs, &ls, &GateParams::default()).is_err());
        ls[1] = false;
        assert!(fit_gate(&fs, &ls, &GateParams::default()).is_ok());
    }

    #[test]
    fn gate_branches() {
        assert_eq!(gate(true, 2).released, Release::Class(2));
        assert_eq!(gate(false, 2).released, Release::Abstain);
        assert_eq!(gate(false, 2).released.to_string(), "HUMAN_REVIEW");
        assert_eq!(gate(true, 2), gate(true, 2));
    }

    #[test]
    fn evaluation_extremes() {
        let (fs, ls) = clusters(20, 10);
        let samples: Vec<(FeatureVector, bool)> = fs.into_iter().zip(ls).collect();
        let e = evaluate_gate(&fixed(1.0), &samples).unwrap();
        assert_eq!((e.acc_on_accurate, e.acc_on_inaccurate), (Some(1.0), Some(0.0)));
        assert_eq!(e.released_accuracy, e.base_accuracy);
        let only_good: Vec<_> = samples.iter().filter(|s| s.1).cloned().collect();
        let e = evaluate_gate(&fixed(-1.0), &only_good).unwrap();
        assert_eq!(e.acc_on_inaccurate, None);
        assert_eq!(e.released_accuracy, None);
    }

    #[test]
    fn perfect_gate_scores_one() {
        let mut m = fixed(0.0);
        m.weights[3] = 1.0;
        m.means[3] = 0.6;
        let (fs, _) = clusters(40, 12);
        let samples: Vec<(FeatureVector, bool)> = fs.into_iter().map(|f| {
            let correct = f.values[3] >= 0.6;
            (f, correct)
        }).collect();
        let e = evaluate_gate(&m, &samples).unwrap();
        assert_eq!((e.acc_on_accurate, e.acc_on_inaccurate), (Some(1.0), Some(1.0)));
        assert_eq!(e.released_accuracy, Some(1.0));
    }

    #[test]
    fn model_text_round_trip() {
        let (fs, ls) = clusters(50, 11);
        let m = fit_gate(&fs, &ls, &GateParams::default()).unwrap();
        assert_eq!(GateModel::from_text(&m.to_text().unwrap(), Path::new("g")).unwrap(), m);
    }
}
