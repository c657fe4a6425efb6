//! Pixel-level coverage of the lesion by the predicted-class attention
//! region, and correlation of those attributes with predictive performance.
//!
//! Ratios with an empty denominator are `None` and are skipped by every
//! aggregation below rather than being read as zero.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PixelConfusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl PixelConfusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_pixels(region: &BinaryMask, lesion: &BinaryMask) -> Result<PixelConfusion> {
    if region.height() != lesion.height() || region.width() != lesion.width() {
        return Err(Error::ShapeMismatch {
            expected: vec![lesion.height(), lesion.width()],
            actual: vec![region.height(), region.width()],
        });
    }
    let mut c = PixelConfusion::default();
    for (&r, &l) in region.bits().iter().zip(lesion.bits()) {
        match (r, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `tp / (tp + fn)`; `None` without lesion pixels.
pub fn att_sensitivity(c: &PixelConfusion) -> Option<f64> {
    ratio(c.tp, c.tp + c.fn_)
}

/// `fp / (fp + tn)`; `None` when every pixel is lesion.
pub fn att_fpr(c: &PixelConfusion) -> Option<f64> {
    ratio(c.fp, c.fp + c.tn)
}

/// Mean of lesion IoU and background IoU, skipping a class whose union is
/// empty.
pub fn mean_iou(c: &PixelConfusion) -> Option<f64> {
    let ious: Vec<f64> = [
        ratio(c.tp, c.tp + c.fp + c.fn_),
        ratio(c.tn, c.tn + c.fp + c.fn_),
    ]
    .into_iter()
    .flatten()
    .collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

pub fn lesion_ratio(lesion: &BinaryMask) -> f64 {
    lesion.count() as f64 / lesion.len() as f64
}

/// Pearson product-moment correlation. `Ok(None)` when either input is
/// constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs two equal-length samples of size >= 2 (got {} and {})",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Coverage attributes of one classified sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrReport {
    pub id: String,
    pub att_sensitivity: Option<f64>,
    pub att_fpr: Option<f64>,
    pub mean_iou: Option<f64>,
    pub lesion_ratio: f64,
    pub predicted: usize,
    pub truth: Option<usize>,
    pub correct: Option<bool>,
    /// Largest class probability of the base prediction.
    pub max_prob: f64,
}

impl AttrReport {
    /// Computes all attributes from an attention region and a lesion mask.
    pub fn from_masks(
        id: impl Into<String>,
        region: &BinaryMask,
        lesion: &BinaryMask,
        predicted: usize,
        truth: Option<usize>,
        max_prob: f64,
    ) -> Result<Self> {
        let c = confusion_pixels(region, lesion)?;
        Ok(AttrReport {
            id: id.into(),
            att_sensitivity: att_sensitivity(&c),
            att_fpr: att_fpr(&c),
            mean_iou: mean_iou(&c),
            lesion_ratio: lesion_ratio(lesion),
            predicted,
            truth,
            correct: truth.map(|t| t == predicted),
            max_prob,
        })
    }

    pub fn attribute(&self, a: Attribute) -> Option<f64> {
        match a {
            Attribute::Sensitivity => self.att_sensitivity,
            Attribute::Fpr => self.att_fpr,
            Attribute::MeanIou => self.mean_iou,
            Attribute::LesionRatio => Some(self.lesion_ratio),
        }
    }

    pub fn has_undefined_metric(&self) -> bool {
        self.att_sensitivity.is_none() || self.att_fpr.is_none()
    }
}

pub const REPORT_HEADER: [&str; 8] = [
    "id",
    "att_sensitivity",
    "att_fpr",
    "mean_iou",
    "lesion_ratio",
    "predicted",
    "truth",
    "correct",
];

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes reports as CSV with [`REPORT_HEADER`]; undefined values are `NA`.
pub fn write_reports_csv<W: Write>(reports: &[AttrReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ser = |e: csv::Error| Error::Serialize(e.to_string());
    w.write_record(REPORT_HEADER).map_err(ser)?;
    for r in reports {
        w.write_record([
            r.id.clone(),
            fmt_opt(r.att_sensitivity),
            fmt_opt(r.att_fpr),
            fmt_opt(r.mean_iou),
            r.lesion_ratio.to_string(),
            r.predicted.to_string(),
            r.truth.map_or_else(|| "NA".into(), |t| t.to_string()),
            r.correct.map_or_else(|| "NA".into(), |c| c.to_string()),
        ])
        .map_err(ser)?;
    }
    w.flush().map_err(|e| Error::Serialize(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Sensitivity,
    Fpr,
    MeanIou,
    LesionRatio,
}

/// Attribute-performance correlations over equal-count bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub attribute: Attribute,
    pub bins: usize,
    pub bin_attribute_means: Vec<f64>,
    pub bin_accuracy: Vec<f64>,
    pub bin_macro_f1: Vec<f64>,
    /// Pearson r between bin attribute means and bin macro F1.
    pub r_f1: Option<f64>,
    /// Pearson r between bin attribute means and bin accuracy.
    pub r_accuracy: Option<f64>,
    /// Per-sample Pearson r between the attribute and the sample's lesion ratio.
    pub r_lesion_ratio: Option<f64>,
    /// Per-sample Pearson r between the attribute and 0/1 correctness.
    pub point_biserial: Option<f64>,
}

/// Macro F1 over the classes present in either truths or predictions.
pub fn macro_f1(pairs: &[(usize, usize)]) -> f64 {
    let classes: BTreeSet<usize> = pairs.iter().flat_map(|&(p, t)| [p, t]).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let tp = pairs.iter().filter(|&&(p, t)| p == c && t == c).count();
            let fp = pairs.iter().filter(|&&(p, t)| p == c && t != c).count();
            let fn_ = pairs.iter().filter(|&&(p, t)| p != c && t == c).count();
            let den = 2 * tp + fp + fn_;
            if den == 0 {
                0.0
            } else {
                2.0 * tp as f64 / den as f64
            }
        })
        .sum();
    total / classes.len() as f64
}

/// Sorts labelled samples by `attribute`, splits them into `bins` equal-count
/// bins and correlates bin means with bin accuracy and macro F1.
///
/// Samples whose attribute is undefined are dropped. Ties in the attribute
/// keep the input order.
pub fn correlate_attributes(reports: &[AttrReport], attribute: Attribute, bins: usize) -> Result<CorrelationTable> {
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least 2 bins".into()));
    }
    let mut rows: Vec<(f64, &AttrReport, usize)> = Vec::new();
    for r in reports {
        let truth = r.truth.ok_or_else(|| {
            Error::InsufficientData(format!("report {:?} has no true label", r.id))
        })?;
        if let Some(v) = r.attribute(attribute) {
            rows.push((v, r, truth));
        }
    }
    if rows.len() < bins {
        return Err(Error::InsufficientData(format!(
            "{} samples with a defined attribute for {bins} bins",
            rows.len()
        )));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = rows.len();
    let mut means = Vec::with_capacity(bins);
    let mut accs = Vec::with_capacity(bins);
    let mut f1s = Vec::with_capacity(bins);
    for b in 0..bins {
        let chunk = &rows[b * n / bins..(b + 1) * n / bins];
        let k = chunk.len() as f64;
        means.push(chunk.iter().map(|r| r.0).sum::<f64>() / k);
        accs.push(chunk.iter().filter(|r| r.1.predicted == r.2).count() as f64 / k);
        let pairs: Vec<(usize, usize)> = chunk.iter().map(|r| (r.1.predicted, r.2)).collect();
        f1s.push(macro_f1(&pairs));
    }
    let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let correct: Vec<f64> = rows
        .iter()
        .map(|r| if r.1.predicted == r.2 { 1.0 } else { 0.0 })
        .collect();
    let lesion: Vec<f64> = rows.iter().map(|r| r.1.lesion_ratio).collect();
    Ok(CorrelationTable {
        attribute,
        bins,
        r_f1: pearson(&means, &f1s)?,
        r_accuracy: pearson(&means, &accs)?,
        r_lesion_ratio: pearson(&values, &lesion)?,
        point_biserial: pearson(&values, &correct)?,
        bin_attribute_means: means,
        bin_accuracy: accs,
        bin_macro_f1: f1s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(bits: &[bool], w: usize) -> BinaryMask {
        BinaryMask::new(bits.len() / w, w, bits.to_vec()).unwrap()
    }

    fn conf(tp: usize, fp: usize, tn: usize, fn_: usize) -> PixelConfusion {
        PixelConfusion { tp, fp, tn, fn_ }
    }

    #[test]
    fn identical_full_masks() {
        let m = mask(&[true; 6], 3);
        let c = confusion_pixels(&m, &m).unwrap();
        assert_eq!(c, conf(6, 0, 0, 0));
        assert_eq!(att_sensitivity(&c), Some(1.0));
        assert_eq!(att_fpr(&c), None);
    }

    #[test]
    fn empty_region() {
        let lesion = mask(&[true, false, true, false], 2);
        let c = confusion_pixels(&mask(&[false; 4], 2), &lesion).unwrap();
        assert_eq!((c.tp, c.fp), (0, 0));
        assert_eq!(att_sensitivity(&c), Some(0.0));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        assert!(confusion_pixels(&mask(&[true; 4], 2), &mask(&[true; 4], 4)).is_err());
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(att_sensitivity(&conf(3, 0, 0, 1)), Some(0.75));
        assert_eq!(att_fpr(&conf(0, 1, 3, 0)), Some(0.25));
        let miou = mean_iou(&conf(2, 1, 4, 1)).unwrap();
        assert!((miou - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(mean_iou(&conf(0, 0, 0, 0)), None);
        // only the lesion class has a nonempty union
        assert_eq!(mean_iou(&conf(4, 0, 0, 0)), Some(1.0));
    }

    #[test]
    fn region_vs_lesion_relations() {
        let lesion = mask(&[true, true, false, false, false, true], 3);
        let c = confusion_pixels(&lesion, &lesion).unwrap();
        assert_eq!(att_sensitivity(&c), Some(1.0));
        assert_eq!(att_fpr(&c), Some(0.0));
        assert_eq!(mean_iou(&c), Some(1.0));
        let c = confusion_pixels(&lesion.complement(), &lesion).unwrap();
        assert_eq!(att_sensitivity(&c), Some(0.0));
        assert_eq!(mean_iou(&c), Some(0.0));
        let subset = mask(&[true, false, false, false, false, false], 3);
        assert_eq!(att_fpr(&confusion_pixels(&subset, &lesion).unwrap()), Some(0.0));
        let everything = mask(&[true; 6], 3);
        let c = confusion_pixels(&everything, &mask(&[false; 6], 3)).unwrap();
        assert_eq!(att_fpr(&c), Some(1.0));
        assert_eq!(att_sensitivity(&c), None);
    }

    #[test]
    fn lesion_ratio_examples() {
        assert_eq!(lesion_ratio(&mask(&[true; 4], 2)), 1.0);
        assert_eq!(lesion_ratio(&mask(&[false; 4], 2)), 0.0);
        let half: Vec<bool> = (0..16).map(|i| i % 2 == 0).collect();
        assert_eq!(lesion_ratio(&mask(&half, 4)), 0.5);
    }

    #[test]
    fn random_pairs_match_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a: Vec<bool> = (0..64).map(|_| rng.random()).collect();
            let b: Vec<bool> = (0..64).map(|_| rng.random()).collect();
            let c = confusion_pixels(&mask(&a, 8), &mask(&b, 8)).unwrap();
            let mut oracle = [0usize; 4];
            for i in 0..64 {
                let slot = (a[i] as usize) * 2 + b[i] as usize;
                oracle[slot] += 1;
            }
            assert_eq!([c.tn, c.fn_, c.fp, c.tp], oracle);
        }
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&xs, &xs).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
        // textbook: sxy = 5.5, sxx = 5, syy = 8.75
        let expected = 5.5 / (5.0f64 * 8.75).sqrt();
        let r = pearson(&xs, &[1.0, 3.0, 2.0, 5.0]).unwrap().unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 0.8315).abs() < 1e-4);
        assert_eq!(pearson(&xs, &[2.0; 4]).unwrap(), None);
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&xs, &[1.0, 2.0]).is_err());
    }

    fn labelled(id: usize, attr: f64, correct: bool) -> AttrReport {
        AttrReport {
            id: format!("s{id:05}"),
            att_sensitivity: Some(attr),
            att_fpr: Some(0.1),
            mean_iou: Some(0.5),
            lesion_ratio: 0.3,
            predicted: 0,
            truth: Some(if correct { 0 } else { 1 }),
            correct: Some(correct),
            max_prob: 0.8,
        }
    }

    #[test]
    fn attribute_equal_to_correctness() {
        let reports: Vec<_> = (0..40).map(|i| labelled(i, (i % 2) as f64, i % 2 == 1)).collect();
        let t = correlate_attributes(&reports, Attribute::Sensitivity, 4).unwrap();
        assert!((t.point_biserial.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_attribute_has_small_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reports: Vec<_> = (0..10_000)
            .map(|i| labelled(i, rng.random(), rng.random_bool(0.6)))
            .collect();
        let t = correlate_attributes(&reports, Attribute::Sensitivity, 10).unwrap();
        assert!(t.point_biserial.unwrap().abs() < 0.05);
    }

    #[test]
    fn planted_monotone_link_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let reports: Vec<_> = (0..5000)
            .map(|i| {
                let a: f64 = rng.random();
                labelled(i, a, rng.random_bool(a))
            })
            .collect();
        let t = correlate_attributes(&reports, Attribute::Sensitivity, 10).unwrap();
        assert!(t.r_accuracy.unwrap() > 0.9, "{t:?}");
        assert!(t.r_f1.unwrap() > 0.9, "{t:?}");
        assert_eq!(t.bin_accuracy.len(), 10);
    }

    #[test]
    fn correlation_preconditions() {
        let reports: Vec<_> = (0..3).map(|i| labelled(i, 0.5, true)).collect();
        assert!(matches!(
            correlate_attributes(&reports, Attribute::Sensitivity, 4),
            Err(Error::InsufficientData(_))
        ));
        let mut unlabelled = reports.clone();
        unlabelled[0].truth = None;
        assert!(correlate_attributes(&unlabelled, Attribute::Sensitivity, 2).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[(0, 0), (1, 1)]), 1.0);
        // class 0: tp1 fp1 fn0 -> 2/3 ; class 1: tp0 fp0 fn1 -> 0
        assert!((macro_f1(&[(0, 0), (0, 1)]) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_uses_fixed_header_and_na() {
        let mut r = labelled(1, 0.25, true);
        r.att_fpr = None;
        r.truth = None;
        r.correct = None;
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "id,att_sensitivity,att_fpr,mean_iou,lesion_ratio,predicted,truth,correct"
        );
        assert_eq!(lines.next().unwrap(), "s00001,0.25,NA,0.5,0.3,0,NA,NA");
    }

    proptest! {
        #[test]
        fn complement_swaps_cells(bits in prop::collection::vec(any::<(bool, bool)>(), 64)) {
            let region = mask(&bits.iter().map(|b| b.0).collect::<Vec<_>>(), 8);
            let lesion = mask(&bits.iter().map(|b| b.1).collect::<Vec<_>>(), 8);
            let c = confusion_pixels(&region, &lesion).unwrap();
            let cc = confusion_pixels(&region.complement(), &lesion).unwrap();
            prop_assert_eq!((c.tp, c.fp, c.tn, c.fn_), (cc.fn_, cc.tn, cc.fp, cc.tp));
            prop_assert_eq!(c.total(), 64);
            for v in [att_sensitivity(&c), att_fpr(&c), mean_iou(&c)].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn pearson_affine_invariance(
            xs in prop::collection::vec(-10.0f64..10.0, 5..30),
            a in 0.1f64..5.0, b in -5.0f64..5.0,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x + i as f64).collect();
            if let Some(r) = pearson(&xs, &ys).unwrap() {
                let tx: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let r2 = pearson(&tx, &ys).unwrap().unwrap();
                prop_assert!((r - r2).abs() < 1e-9);
            }
        }
    }
}
