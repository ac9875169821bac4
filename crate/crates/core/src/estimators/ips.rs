//! Self-normalized inverse propensity weighting.

use crate::dataset::EvalDataset;
use crate::{Error, Result};

/// Hájek estimator: difference of the propensity-weighted arm means.
pub fn ate_ips(data: &EvalDataset, scores: &[f64]) -> Result<f64> {
    super::require_both_groups(data)?;
    if scores.len() != data.n_rows() {
        return Err(Error::invalid("one propensity score per row required"));
    }
    let (mut s1, mut w1, mut s0, mut w0) = (0.0, 0.0, 0.0, 0.0);
    for (row, ((&t, &y), &e)) in data.treatment().iter().zip(data.outcome()).zip(scores).enumerate() {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::UntrimmedScore { row, score: e });
        }
        if t == 1 {
            s1 += y / e;
            w1 += 1.0 / e;
        } else {
            s0 += y / (1.0 - e);
            w0 += 1.0 / (1.0 - e);
        }
    }
    Ok(s1 / w1 - s0 / w0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(t: Vec<u8>, y: Vec<f64>) -> EvalDataset {
        let n = t.len();
        EvalDataset::new(t, y, vec![vec![]; n], vec![]).unwrap()
    }

    #[test]
    fn uniform_scores_give_difference_of_means() {
        let t = vec![1, 0, 1, 0];
        let y: Vec<f64> = t.iter().map(|&t| f64::from(t)).collect();
        assert_eq!(ate_ips(&ds(t, y), &[0.5; 4]).unwrap(), 1.0);
    }

    #[test]
    fn constant_outcome_is_zero() {
        let d = ds(vec![1, 0, 1, 0, 0], vec![7.0; 5]);
        let ate = ate_ips(&d, &[0.2, 0.3, 0.7, 0.45, 0.8]).unwrap();
        assert!(ate.abs() < 1e-12);
    }

    #[test]
    fn extreme_scores_are_rejected() {
        let d = ds(vec![1, 0], vec![1.0, 0.0]);
        assert!(matches!(ate_ips(&d, &[1.0, 0.5]), Err(Error::UntrimmedScore { row: 0, .. })));
        assert!(matches!(ate_ips(&d, &[0.5, 0.0]), Err(Error::UntrimmedScore { row: 1, .. })));
    }
}
