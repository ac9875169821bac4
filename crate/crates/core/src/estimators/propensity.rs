//! Logistic propensity model and overlap trimming.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::EvalDataset;
use crate::stats::sigmoid;
use crate::{Error, Result};

pub const L2_PENALTY: f64 = 1e-4;
const MAX_ITER: usize = 100;
const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub roc_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub scores: Vec<f64>,
    pub metrics: ClassificationMetrics,
    pub converged: bool,
    pub iterations: usize,
}

/// Fit P(T=1 | covariates) by L2-penalized logistic regression.
pub fn fit_propensity(data: &EvalDataset) -> Result<PropensityModel> {
    let fit = fit_logistic(data.matrix(), data.n_rows(), data.n_cols(), data.treatment(), L2_PENALTY)?;
    if !fit.converged {
        log::warn!("propensity model did not converge in {MAX_ITER} iterations; using best iterate");
    }
    let scores: Vec<f64> = (0..data.n_rows())
        .map(|i| sigmoid(linear_predictor(&fit.beta, data.row(i))))
        .collect();
    let metrics = classification_metrics(data.treatment(), &scores);
    Ok(PropensityModel {
        intercept: fit.beta[0],
        coefficients: fit.beta[1..].to_vec(),
        scores,
        metrics,
        converged: fit.converged,
        iterations: fit.iterations,
    })
}

fn linear_predictor(beta: &[f64], row: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
}

pub(crate) struct LogisticFit {
    /// intercept first
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

// log σ(η) without overflow
fn log_sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        -(-eta).exp().ln_1p()
    } else {
        eta - eta.exp().ln_1p()
    }
}

fn penalized_loglik(x: &[f64], n: usize, p: usize, y: &[u8], beta: &[f64], lambda: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..n {
        let eta = linear_predictor(beta, &x[i * p..(i + 1) * p]);
        ll += if y[i] == 1 { log_sigmoid(eta) } else { log_sigmoid(-eta) };
    }
    ll - 0.5 * lambda * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Damped Newton (IRLS) on the penalized log-likelihood. The intercept is
/// not penalized.
pub(crate) fn fit_logistic(x: &[f64], n: usize, p: usize, y: &[u8], lambda: f64) -> Result<LogisticFit> {
    let n1 = y.iter().filter(|&&t| t == 1).count();
    if n == 0 || n1 == 0 || n1 == n {
        return Err(Error::SingleClass);
    }
    let k = p + 1;
    let mut beta = vec![0.0; k];
    let mut ll = penalized_loglik(x, n, p, y, &beta, lambda);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(k, k);
        let mut g = DVector::<f64>::zeros(k);
        let mut xi = vec![1.0; k];
        for i in 0..n {
            xi[1..].copy_from_slice(&x[i * p..(i + 1) * p]);
            let mu = sigmoid(linear_predictor(&beta, &x[i * p..(i + 1) * p]));
            let w = (mu * (1.0 - mu)).max(1e-12);
            let r = f64::from(y[i]) - mu;
            for a in 0..k {
                g[a] += xi[a] * r;
                let wa = w * xi[a];
                for b in 0..=a {
                    h[(a, b)] += wa * xi[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        for j in 1..k {
            g[j] -= lambda * beta[j];
            h[(j, j)] += lambda;
        }
        let step = solve_spd(h, &g)?;
        // halve the step until the objective does not decrease
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let cand_ll = penalized_loglik(x, n, p, y, &cand, lambda);
            if cand_ll >= ll - 1e-12 * ll.abs() {
                accepted = Some((cand, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_ll)) = accepted else {
            // no ascent direction left; the current iterate is the best we have
            converged = true;
            break;
        };
        let delta = beta
            .iter()
            .zip(&cand)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = cand;
        ll = cand_ll;
        if delta < TOLERANCE {
            converged = true;
            break;
        }
    }
    Ok(LogisticFit {
        beta,
        converged,
        iterations,
    })
}

/// Solve a symmetric positive (semi-)definite system, adding a small ridge
/// if the Cholesky factorization fails.
pub(crate) fn solve_spd(mut a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut ridge = 0.0;
    for _ in 0..8 {
        if let Some(ch) = a.clone().cholesky() {
            return Ok(ch.solve(b));
        }
        let add = if ridge == 0.0 { scale * 1e-12 } else { ridge * 100.0 };
        for i in 0..a.nrows() {
            a[(i, i)] += add - ridge;
        }
        ridge = add;
    }
    Err(Error::invalid("linear system is numerically singular"))
}

/// Accuracy and F1 at threshold 0.5, plus ROC-AUC (ties count one half).
pub fn classification_metrics(y: &[u8], scores: &[f64]) -> ClassificationMetrics {
    let n = y.len();
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &s) in y.iter().zip(scores) {
        let pred = u8::from(s >= 0.5);
        if pred == t {
            correct += 1;
        }
        match (pred, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    ClassificationMetrics {
        accuracy: correct as f64 / n.max(1) as f64,
        f1,
        roc_auc: roc_auc(y, scores),
    }
}

/// Mann-Whitney form of the area under the ROC curve.
pub fn roc_auc(y: &[u8], scores: &[f64]) -> f64 {
    let n1 = y.iter().filter(|&&t| t == 1).count();
    let n0 = y.len() - n1;
    if n1 == 0 || n0 == 0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // average of 1-based ranks i+1..=j+1
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if y[k] == 1 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    (rank_sum - (n1 * (n1 + 1)) as f64 / 2.0) / (n1 * n0) as f64
}

/// Keep rows with `low <= score <= high`. The returned dataset carries the
/// kept scores as its propensity column.
pub fn trim(data: &EvalDataset, scores: &[f64], low: f64, high: f64) -> Result<(EvalDataset, Vec<usize>)> {
    if scores.len() != data.n_rows() {
        return Err(Error::invalid("one score per row required for trimming"));
    }
    if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
        return Err(Error::invalid(format!("invalid trim bounds [{low}, {high}]")));
    }
    let kept: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] >= low && scores[i] <= high)
        .collect();
    if kept.is_empty() {
        return Err(Error::NoOverlap);
    }
    let out = data
        .subset(&kept)
        .with_propensity(kept.iter().map(|&i| scores[i]).collect())?;
    log::info!(
        "trimming kept {} treated and {} control rows of {}",
        out.n_treated(),
        out.n_control(),
        data.n_rows()
    );
    Ok((out, kept))
}
