//! Permutation p-values for the ECDF distances.
//!
//! Each resample draws from its own ChaCha stream keyed by the resample
//! index, so results do not depend on thread count or scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::distance::{dist_stats, dist_stats_sorted, DistStats, Statistic};
use crate::error::{Error, Result};

pub const MIN_RESAMPLES: usize = 100;

/// Relative slack when counting resampled statistics as "at least as
/// extreme", so that permutations reproducing the observed split exactly are
/// not lost to rounding.
const TIE_EPS: f64 = 1e-12;

/// p-values for every statistic from one shared set of `resamples`
/// permutations of the pooled sample: `(1 + #{T* >= T}) / (B + 1)`.
pub fn bootstrap_pvalues(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<DistStats> {
    if resamples < MIN_RESAMPLES {
        return Err(Error::InvalidArgument(format!(
            "{resamples} resamples, need at least {MIN_RESAMPLES}"
        )));
    }
    let observed = dist_stats(a, b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = a.len();

    let counts = (0..resamples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let mut perm = pooled.clone();
            perm.shuffle(&mut rng);
            let (pa, pb) = perm.split_at_mut(n);
            pa.sort_by(f64::total_cmp);
            pb.sort_by(f64::total_cmp);
            let s = dist_stats_sorted(pa, pb);
            Statistic::ALL.map(|st| {
                let obs = observed.get(st);
                usize::from(s.get(st) >= obs - TIE_EPS * obs.abs().max(1.0))
            })
        })
        .reduce(|| [0; 5], |x, y| std::array::from_fn(|i| x[i] + y[i]));

    let mut p = DistStats::default();
    for (i, st) in Statistic::ALL.into_iter().enumerate() {
        p.set(st, (1 + counts[i]) as f64 / (resamples + 1) as f64);
    }
    Ok(p)
}

pub fn bootstrap_pvalue(stat: Statistic, a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    Ok(bootstrap_pvalues(a, b, resamples, seed)?.get(stat))
}
