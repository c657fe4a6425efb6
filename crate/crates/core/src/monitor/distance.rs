//! Empirical CDFs and two-sample ECDF distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous empirical CDF: `F(x)` is the fraction of the sample `<= x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::InsufficientData("ecdf of an empty sample".into()));
        }
        if sample.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("ecdf sample contains NaN".into()));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Ecdf { sorted })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// Sorted support (with multiplicity).
    pub fn support(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Ks,
    Kuiper,
    CramerVonMises,
    AndersonDarling,
    Wasserstein,
}

impl Statistic {
    pub const ALL: [Statistic; 5] = [
        Statistic::Ks,
        Statistic::Kuiper,
        Statistic::CramerVonMises,
        Statistic::AndersonDarling,
        Statistic::Wasserstein,
    ];
}

/// All five two-sample statistics for one pair of samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistStats {
    pub ks: f64,
    pub kuiper: f64,
    pub cramer_von_mises: f64,
    pub anderson_darling: f64,
    pub wasserstein: f64,
}

impl DistStats {
    pub fn get(&self, s: Statistic) -> f64 {
        match s {
            Statistic::Ks => self.ks,
            Statistic::Kuiper => self.kuiper,
            Statistic::CramerVonMises => self.cramer_von_mises,
            Statistic::AndersonDarling => self.anderson_darling,
            Statistic::Wasserstein => self.wasserstein,
        }
    }

    pub fn set(&mut self, s: Statistic, v: f64) {
        match s {
            Statistic::Ks => self.ks = v,
            Statistic::Kuiper => self.kuiper = v,
            Statistic::CramerVonMises => self.cramer_von_mises = v,
            Statistic::AndersonDarling => self.anderson_darling = v,
            Statistic::Wasserstein => self.wasserstein = v,
        }
    }
}

/// Two-sample statistics over the pooled sample.
///
/// With `F_a`, `F_b` the sample ECDFs, `H` the pooled ECDF and the sum
/// running over distinct pooled values `z` with multiplicity `l`:
///
/// - KS `= max |F_a - F_b|`, Kuiper `= max(F_a - F_b) + max(F_b - F_a)`
/// - CvM `= (nm / N²) Σ l (F_a - F_b)²`
/// - AD `= (nm / N) Σ (l / N) (F_a - F_b)² / (H (1 - H))`, skipping `H = 1`
/// - Wasserstein-1 `= ∫ |F_a - F_b| dx`
///
/// Without ties CvM and AD reduce to the usual rank formulations.
pub fn dist_stats(a: &[f64], b: &[f64]) -> Result<DistStats> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("distance between empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("sample contains NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(dist_stats_sorted(&a, &b))
}

/// [`dist_stats`] on inputs that are already sorted ascending.
pub fn dist_stats_sorted(a: &[f64], b: &[f64]) -> DistStats {
    let (n, m) = (a.len(), b.len());
    let (nf, mf) = (n as f64, m as f64);
    let total = nf + mf;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut d_plus, mut d_minus) = (0.0f64, 0.0f64);
    let (mut cvm, mut ad, mut w1) = (0.0, 0.0, 0.0);
    while i < n || j < m {
        let z = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let (i0, j0) = (i, j);
        while i < n && a[i] <= z {
            i += 1;
        }
        while j < m && b[j] <= z {
            j += 1;
        }
        let l = ((i - i0) + (j - j0)) as f64;
        let fa = i as f64 / nf;
        let fb = j as f64 / mf;
        let diff = fa - fb;
        d_plus = d_plus.max(diff);
        d_minus = d_minus.max(fb - fa);
        cvm += l * diff * diff;
        let h = (i + j) as f64 / total;
        if i + j < n + m {
            ad += (l / total) * diff * diff / (h * (1.0 - h));
            let next = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) => x.min(y),
                (Some(&x), None) => x,
                (None, Some(&y)) => y,
                (None, None) => unreachable!(),
            };
            w1 += diff.abs() * (next - z);
        }
    }
    DistStats {
        ks: d_plus.max(d_minus),
        kuiper: d_plus + d_minus,
        cramer_von_mises: nf * mf / (total * total) * cvm,
        anderson_darling: nf * mf / total * ad,
        wasserstein: w1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ecdf_examples() {
        let e = Ecdf::new(&[5.0]).unwrap();
        assert_eq!(e.eval(4.9), 0.0);
        assert_eq!(e.eval(5.0), 1.0);
        let e = Ecdf::new(&[3.0, 1.0, 2.0]).unwrap();
        assert!((e.eval(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!(Ecdf::new(&[]).is_err());
    }

    #[test]
    fn ecdf_matches_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..200).map(|_| (rng.random::<f64>() * 10.0).round() / 10.0).collect();
        let e = Ecdf::new(&xs).unwrap();
        for k in -5..=105 {
            let x = k as f64 / 100.0;
            let naive = xs.iter().filter(|&&v| v <= x).count() as f64 / xs.len() as f64;
            assert_eq!(e.eval(x), naive);
        }
    }

    #[test]
    fn identical_samples_are_at_distance_zero() {
        let a = [0.3, 0.1, 0.7, 0.7, 0.2];
        let s = dist_stats(&a, &a).unwrap();
        assert_eq!(s, DistStats::default());
    }

    #[test]
    fn disjoint_point_masses() {
        let s = dist_stats(&[0.0; 4], &[1.0; 6]).unwrap();
        assert_eq!(s.ks, 1.0);
        assert_eq!(s.kuiper, 1.0);
        assert!((s.wasserstein - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shifted_triplets() {
        let s = dist_stats(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((s.ks - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.wasserstein - 1.0).abs() < 1e-15);
        assert!((s.kuiper - 1.0 / 3.0).abs() < 1e-15);
    }

    /// Classic rank forms for tie-free samples.
    fn rank_oracle(a: &[f64], b: &[f64]) -> (f64, f64) {
        let (n, m) = (a.len() as f64, b.len() as f64);
        let mut pooled: Vec<(f64, bool)> = a.iter().map(|&x| (x, true)).chain(b.iter().map(|&y| (y, false))).collect();
        pooled.sort_by(|p, q| p.0.total_cmp(&q.0));
        let big_n = n + m;
        // Anderson (1962): U = n Σ (r_i - i)² + m Σ (s_j - j)²
        let (mut u, mut ia, mut ib) = (0.0, 0.0, 0.0);
        for (rank, &(_, from_a)) in pooled.iter().enumerate() {
            let r = rank as f64 + 1.0;
            if from_a {
                ia += 1.0;
                u += n * (r - ia).powi(2);
            } else {
                ib += 1.0;
                u += m * (r - ib).powi(2);
            }
        }
        let cvm = u / (n * m * big_n) - (4.0 * m * n - 1.0) / (6.0 * big_n);
        // Pettitt (1976): (1/(nm)) Σ_{i<N} (N M_i - n i)² / (i (N - i))
        let (mut ad, mut count_a) = (0.0, 0.0);
        for (k, &(_, from_a)) in pooled.iter().enumerate().take(pooled.len() - 1) {
            if from_a {
                count_a += 1.0;
            }
            let i = k as f64 + 1.0;
            ad += (big_n * count_a - n * i).powi(2) / (i * (big_n - i));
        }
        (cvm, ad / (n * m))
    }

    #[test]
    fn cvm_and_ad_match_rank_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.random_range(3..40);
            let m = rng.random_range(3..40);
            let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.2).collect();
            let s = dist_stats(&a, &b).unwrap();
            let (cvm, ad) = rank_oracle(&a, &b);
            assert!((s.cramer_von_mises - cvm).abs() < 1e-9, "{} vs {cvm}", s.cramer_von_mises);
            assert!((s.anderson_darling - ad).abs() < 1e-9, "{} vs {ad}", s.anderson_darling);
        }
    }

    #[test]
    fn frozen_cvm_value() {
        // scipy.stats.cramervonmises_2samp([1, 2, 5, 7], [3, 4, 6, 8, 9]).statistic
        let s = dist_stats(&[1.0, 2.0, 5.0, 7.0], &[3.0, 4.0, 6.0, 8.0, 9.0]).unwrap();
        assert!((s.cramer_von_mises - 0.1870370370370369).abs() < 1e-12, "{}", s.cramer_von_mises);
    }

    #[test]
    fn wasserstein_matches_sorted_quantile_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let mut b: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 1.5).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let oracle = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 50.0;
        assert!((dist_stats(&a, &b).unwrap().wasserstein - oracle).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(dist_stats(&[], &[1.0]).is_err());
        assert!(dist_stats(&[1.0], &[]).is_err());
    }

    proptest! {
        #[test]
        fn statistic_properties(
            a in prop::collection::vec(0u8..20, 1..30),
            b in prop::collection::vec(0u8..20, 1..30),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let ab = dist_stats(&a, &b).unwrap();
            let ba = dist_stats(&b, &a).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab.ks));
            prop_assert!(ab.kuiper >= ab.ks);
            for s in Statistic::ALL {
                prop_assert!(ab.get(s) >= 0.0);
            }
            prop_assert!((ab.ks - ba.ks).abs() < 1e-12);
            prop_assert!((ab.kuiper - ba.kuiper).abs() < 1e-12);
            prop_assert!((ab.cramer_von_mises - ba.cramer_von_mises).abs() < 1e-12);
            prop_assert!((ab.wasserstein - ba.wasserstein).abs() < 1e-12);
            let mut sa = a.clone();
            let mut sb = b.clone();
            sa.sort_by(f64::total_cmp);
            sb.sort_by(f64::total_cmp);
            if sa == sb {
                prop_assert_eq!(ab.ks, 0.0);
            }
            prop_assert_eq!(ab.ks == 0.0, ab.wasserstein == 0.0);
        }
    }
}
