//! Stratified bootstrap for effect estimates.

use rand::{Rng as _, RngCore};
use serde::Serialize;

use crate::dataset::EvalDataset;
use crate::exec::map_indexed;
use crate::rng::stream;
use crate::stats::{percentile_sorted, sample_std, two_sided_normal_p};
use crate::{Error, Result};

pub const MIN_REPLICATES: usize = 100;
/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary {
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub std_dev: f64,
    pub failed: usize,
    /// Successful replicate estimates in replicate order.
    pub replicates: Vec<f64>,
}

/// Resample rows with replacement within each treatment arm.
pub fn stratified_resample(data: &EvalDataset, rng: &mut impl RngCore) -> Vec<usize> {
    let mut idx = Vec::with_capacity(data.n_rows());
    for arm in [0u8, 1] {
        let rows = data.group_indices(arm);
        for _ in 0..rows.len() {
            idx.push(rows[rng.random_range(0..rows.len())]);
        }
    }
    idx
}

/// Run `estimator` on `b` stratified resamples of `data`.
///
/// Replicate `r` draws from random stream `r` of `seed` and passes the
/// estimator a seed taken from that stream, so the output does not depend
/// on `threads`. The CI is the 2.5/97.5 percentile interval, widened if
/// needed to contain `point`; the p-value is a normal test of
/// `point - null_value` with the bootstrap standard deviation.
pub fn bootstrap<F>(
    estimator: F,
    data: &EvalDataset,
    point: f64,
    b: usize,
    seed: u64,
    null_value: f64,
    threads: usize,
) -> Result<BootstrapSummary>
where
    F: Fn(&EvalDataset, u64) -> Result<f64> + Sync + Send,
{
    if b < MIN_REPLICATES {
        return Err(Error::invalid(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {b}"
        )));
    }
    let results = map_indexed(b, threads, |r| {
        let mut rng = stream(seed, r as u64);
        let idx = stratified_resample(data, &mut rng);
        let inner_seed = rng.next_u64();
        estimator(&data.subset(&idx), inner_seed)
    });
    let mut replicates = Vec::with_capacity(b);
    let mut failed = 0;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) if v.is_finite() => replicates.push(v),
            Ok(v) => {
                log::debug!("bootstrap replicate {r} returned {v}");
                failed += 1;
            }
            Err(e) => {
                log::debug!("bootstrap replicate {r} failed: {e}");
                failed += 1;
            }
        }
    }
    if failed as f64 > MAX_FAILURE_RATE * b as f64 {
        return Err(Error::TooManyFailures { failed, total: b });
    }
    if failed > 0 {
        log::warn!("{failed} of {b} bootstrap replicates failed and were skipped");
    }
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    let sd = sample_std(&replicates);
    Ok(BootstrapSummary {
        ci_low: percentile_sorted(&sorted, 0.025).min(point),
        ci_high: percentile_sorted(&sorted, 0.975).max(point),
        p_value: two_sided_normal_p(point - null_value, sd),
        std_dev: sd,
        failed,
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize) -> EvalDataset {
        let t: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        EvalDataset::new(t, y, vec![vec![]; n], vec![]).unwrap()
    }

    fn mean_outcome(d: &EvalDataset, _: u64) -> Result<f64> {
        Ok(crate::stats::mean(d.outcome()))
    }

    #[test]
    fn constant_estimator() {
        let s = bootstrap(|_, _| Ok(3.0), &data(30), 3.0, 200, 1, 0.0, 1).unwrap();
        assert_eq!((s.ci_low, s.ci_high), (3.0, 3.0));
        assert_eq!(s.p_value, 0.0);
        let s = bootstrap(|_, _| Ok(3.0), &data(30), 3.0, 200, 1, 3.0, 1).unwrap();
        assert_eq!(s.p_value, 1.0);
    }

    #[test]
    fn resamples_preserve_group_sizes() {
        let d = data(31);
        let mut rng = stream(4, 0);
        let idx = stratified_resample(&d, &mut rng);
        let sub = d.subset(&idx);
        assert_eq!(sub.n_treated(), d.n_treated());
        assert_eq!(sub.n_control(), d.n_control());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let d = data(80);
        let a = bootstrap(mean_outcome, &d, 0.0, 150, 9, 0.0, 1).unwrap();
        let b = bootstrap(mean_outcome, &d, 0.0, 150, 9, 0.0, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failures_are_counted() {
        let d = data(40);
        let flaky = |_: &EvalDataset, s: u64| if s % 20 == 0 { Err(Error::NoSamples) } else { Ok(1.0) };
        let s = bootstrap(flaky, &d, 1.0, 200, 2, 0.0, 1).unwrap();
        assert_eq!(s.failed + s.replicates.len(), 200);
        let broken = |_: &EvalDataset, s: u64| if s % 4 == 0 { Err(Error::NoSamples) } else { Ok(1.0) };
        assert!(matches!(
            bootstrap(broken, &d, 1.0, 200, 2, 0.0, 1),
            Err(Error::TooManyFailures { .. })
        ));
        assert!(bootstrap(|_, _| Ok(1.0), &d, 1.0, 99, 2, 0.0, 1).is_err());
    }

    #[test]
    fn ci_contains_point() {
        let d = data(50);
        let s = bootstrap(mean_outcome, &d, 10.0, 100, 0, 0.0, 1).unwrap();
        assert_eq!(s.ci_high, 10.0);
        assert!(s.ci_low <= 10.0);
    }
}
