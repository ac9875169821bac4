//! T- and X-learners on regression forests.

use super::forest::{fit_forest, Forest, ForestParams};
use crate::dataset::EvalDataset;
use crate::rng::derive_seed;
use crate::{Error, Result};

struct Arms {
    treated: Vec<usize>,
    control: Vec<usize>,
}

fn arms(data: &EvalDataset, params: &ForestParams) -> Result<Arms> {
    params.validate()?;
    let needed = 2 * params.min_leaf;
    let treated = data.group_indices(1);
    let control = data.group_indices(0);
    for (group, rows) in [("treated", &treated), ("control", &control)] {
        if rows.len() < needed {
            return Err(Error::GroupTooSmall {
                group,
                size: rows.len(),
                needed,
            });
        }
    }
    Ok(Arms { treated, control })
}

fn rows_of(data: &EvalDataset, idx: &[usize]) -> Vec<f64> {
    let mut x = Vec::with_capacity(idx.len() * data.n_cols());
    for &i in idx {
        x.extend_from_slice(data.row(i));
    }
    x
}

fn fit_on(data: &EvalDataset, idx: &[usize], y: &[f64], params: &ForestParams, seed: u64) -> Result<Forest> {
    fit_forest(&rows_of(data, idx), data.n_cols(), y, params, seed)
}

fn outcome_models(data: &EvalDataset, arms: &Arms, params: &ForestParams, seed: u64) -> Result<(Forest, Forest)> {
    let y = data.outcome();
    let y0: Vec<f64> = arms.control.iter().map(|&i| y[i]).collect();
    let y1: Vec<f64> = arms.treated.iter().map(|&i| y[i]).collect();
    let mu0 = fit_on(data, &arms.control, &y0, params, derive_seed(seed, 0))?;
    let mu1 = fit_on(data, &arms.treated, &y1, params, derive_seed(seed, 1))?;
    Ok((mu0, mu1))
}

/// Separate outcome forests per arm; the ATE averages their difference over
/// all rows.
pub fn ate_tlearner(data: &EvalDataset, params: &ForestParams, seed: u64) -> Result<f64> {
    let arms = arms(data, params)?;
    let (mu0, mu1) = outcome_models(data, &arms, params, seed)?;
    let n = data.n_rows();
    let x = data.matrix();
    let p0 = mu0.predict(x, n);
    let p1 = mu1.predict(x, n);
    Ok(p1.iter().zip(&p0).map(|(a, b)| a - b).sum::<f64>() / n as f64)
}

/// X-learner: impute unit-level effects from the opposite arm's outcome
/// model, regress them per arm and blend with the propensity score `g`:
/// τ(x) = g(x)·τ0(x) + (1 − g(x))·τ1(x).
pub fn ate_xlearner(data: &EvalDataset, scores: &[f64], params: &ForestParams, seed: u64) -> Result<f64> {
    if scores.len() != data.n_rows() {
        return Err(Error::invalid("one propensity score per row required"));
    }
    if let Some((row, &score)) = scores.iter().enumerate().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
        return Err(Error::UntrimmedScore { row, score });
    }
    let arms = arms(data, params)?;
    let (mu0, mu1) = outcome_models(data, &arms, params, seed)?;
    let y = data.outcome();
    let xt = rows_of(data, &arms.treated);
    let xc = rows_of(data, &arms.control);
    let p = data.n_cols();
    let d1: Vec<f64> = mu0
        .predict(&xt, arms.treated.len())
        .iter()
        .zip(&arms.treated)
        .map(|(m, &i)| y[i] - m)
        .collect();
    let d0: Vec<f64> = mu1
        .predict(&xc, arms.control.len())
        .iter()
        .zip(&arms.control)
        .map(|(m, &i)| m - y[i])
        .collect();
    let tau1 = fit_forest(&xt, p, &d1, params, derive_seed(seed, 3))?;
    let tau0 = fit_forest(&xc, p, &d0, params, derive_seed(seed, 2))?;
    let n = data.n_rows();
    let t0 = tau0.predict(data.matrix(), n);
    let t1 = tau1.predict(data.matrix(), n);
    let total: f64 = (0..n).map(|i| scores[i] * t0[i] + (1.0 - scores[i]) * t1[i]).sum();
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn shifted(n: usize, d: f64, seed: u64) -> EvalDataset {
        let mut rng = crate::rng::seeded(seed);
        let mut t = Vec::new();
        let mut y = Vec::new();
        let mut rows = Vec::new();
        for i in 0..n {
            let x: f64 = rng.random();
            let ti = (i % 2) as u8;
            t.push(ti);
            y.push(5.0 * x + d * f64::from(ti));
            rows.push(vec![x]);
        }
        EvalDataset::new(t, y, rows, vec!["x".into()]).unwrap()
    }

    fn small() -> ForestParams {
        ForestParams {
            n_trees: 50,
            ..ForestParams::default()
        }
    }

    #[test]
    fn tlearner_recovers_shift() {
        let ate = ate_tlearner(&shifted(600, 2.5, 1), &small(), 7).unwrap();
        assert!((ate - 2.5).abs() < 0.15, "{ate}");
        let null = ate_tlearner(&shifted(600, 0.0, 2), &small(), 7).unwrap();
        assert!(null.abs() < 0.15, "{null}");
    }

    #[test]
    fn xlearner_constant_effect() {
        let d = shifted(600, 2.5, 3);
        let ate = ate_xlearner(&d, &vec![0.5; 600], &small(), 1).unwrap();
        assert!((ate - 2.5).abs() < 0.15, "{ate}");
    }

    #[test]
    fn xlearner_weight_endpoints() {
        // with g = 0 only the treated-arm effect model counts, with g = 1
        // only the control-arm one; their mean equals g = 0.5
        let d = shifted(300, 1.0, 4);
        let a0 = ate_xlearner(&d, &vec![0.0; 300], &small(), 1).unwrap();
        let a1 = ate_xlearner(&d, &vec![1.0; 300], &small(), 1).unwrap();
        let half = ate_xlearner(&d, &vec![0.5; 300], &small(), 1).unwrap();
        assert!(((a0 + a1) / 2.0 - half).abs() < 1e-9);
    }

    #[test]
    fn small_group_is_an_error() {
        let mut d = shifted(40, 1.0, 5);
        let t: Vec<u8> = (0..40).map(|i| u8::from(i < 6)).collect();
        d = d.with_treatment(t).unwrap();
        assert!(matches!(
            ate_tlearner(&d, &small(), 0),
            Err(Error::GroupTooSmall { group: "treated", size: 6, needed: 10 })
        ));
    }
}
