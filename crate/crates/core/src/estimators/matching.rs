//! One-to-one nearest-neighbour matching with replacement.

use crate::dataset::EvalDataset;
use crate::Result;

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop pipelines; the order is fixed, so
    // results are reproducible
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Every unit takes its counterfactual outcome from the nearest unit of the
/// other arm (Euclidean distance on the covariates, lowest row index on
/// ties); the ATE is the mean imputed difference over all units.
pub fn ate_matching(data: &EvalDataset) -> Result<f64> {
    super::require_both_groups(data)?;
    let treated = data.group_indices(1);
    let control = data.group_indices(0);
    // nearest control for each treated unit and vice versa, as
    // (distance, position in the other arm)
    let mut best_t = vec![(f64::INFINITY, 0usize); treated.len()];
    let mut best_c = vec![(f64::INFINITY, 0usize); control.len()];
    for (a, &i) in treated.iter().enumerate() {
        let xi = data.row(i);
        for (b, &j) in control.iter().enumerate() {
            let d = sq_dist(xi, data.row(j));
            if d < best_t[a].0 {
                best_t[a] = (d, b);
            }
            if d < best_c[b].0 {
                best_c[b] = (d, a);
            }
        }
    }
    let y = data.outcome();
    let from_treated: f64 = treated
        .iter()
        .zip(&best_t)
        .map(|(&i, &(_, b))| y[i] - y[control[b]])
        .sum();
    let from_control: f64 = control
        .iter()
        .zip(&best_c)
        .map(|(&j, &(_, a))| y[treated[a]] - y[j])
        .sum();
    Ok((from_treated + from_control) / data.n_rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(t: Vec<u8>, y: Vec<f64>, x: Vec<f64>) -> EvalDataset {
        EvalDataset::new(t, y, x.into_iter().map(|v| vec![v]).collect(), vec!["x".into()]).unwrap()
    }

    #[test]
    fn covariate_twins() {
        let x = vec![0.0, 0.0, 1.0, 1.0, 5.0, 5.0];
        let t = vec![1, 0, 1, 0, 0, 1];
        let y = vec![12.0, 10.0, 7.0, 5.0, 1.0, 3.0];
        assert_eq!(ate_matching(&ds(t, y, x)).unwrap(), 2.0);
    }

    #[test]
    fn ties_use_lowest_index() {
        // the control at x=0 is equidistant from treated rows 1 and 2
        let d = ds(vec![0, 1, 1], vec![0.0, 10.0, 20.0], vec![0.0, -1.0, 1.0]);
        // control imputes 10; treated rows match the control: 10 and 20
        assert_eq!(ate_matching(&d).unwrap(), (10.0 + 10.0 + 20.0) / 3.0);
    }

    #[test]
    fn duplication_invariance() {
        let x = vec![0.3, 1.2, -0.4, 2.0, 0.9];
        let t = vec![1, 0, 0, 1, 1];
        let y = vec![3.0, 1.0, 0.5, 4.0, 2.5];
        let a = ate_matching(&ds(t.clone(), y.clone(), x.clone())).unwrap();
        let dup = |v: &Vec<f64>| v.iter().chain(v.iter()).copied().collect::<Vec<_>>();
        let tt: Vec<u8> = t.iter().chain(t.iter()).copied().collect();
        let b = ate_matching(&ds(tt, dup(&y), dup(&x))).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(ate_matching(&ds(vec![1, 1], vec![1.0, 2.0], vec![0.0, 1.0])).is_err());
    }
}
