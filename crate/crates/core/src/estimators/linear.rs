//! OLS regression adjustment.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{ColumnKind, EvalDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    /// Coefficient on the treatment indicator.
    pub ate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub df: usize,
    /// Regressor names in design order (intercept and treatment first).
    pub regressors: Vec<String>,
    pub coefficients: Vec<f64>,
}

/// Covariate columns used as regressors: constant columns are skipped, and
/// one indicator per complete one-hot group is left out as the reference.
fn regressor_columns(data: &EvalDataset) -> Vec<usize> {
    let n = data.n_rows();
    let mut keep: Vec<usize> = (0..data.n_cols())
        .filter(|&j| {
            let first = data.row(0)[j];
            (1..n).any(|i| data.row(i)[j] != first)
        })
        .collect();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &j in &keep {
        if let ColumnKind::OneHot { group } = &data.columns()[j].kind {
            groups.entry(group.as_str()).or_default().push(j);
        }
    }
    for cols in groups.values() {
        let complete = (0..n).all(|i| {
            let row = data.row(i);
            cols.iter().map(|&j| row[j]).sum::<f64>() == 1.0
        });
        if complete {
            keep.retain(|j| *j != cols[0]);
        }
    }
    keep
}

/// OLS of the outcome on an intercept, the treatment and the covariates,
/// with a homoskedastic t-based CI and p-value for the treatment term.
pub fn ate_linear(data: &EvalDataset) -> Result<LinearFit> {
    super::require_both_groups(data)?;
    let n = data.n_rows();
    let cols = regressor_columns(data);
    let k = cols.len() + 2;
    if n <= k {
        return Err(Error::invalid(format!(
            "linear regression needs more rows ({n}) than regressors ({k})"
        )));
    }
    let x = DMatrix::from_fn(n, k, |i, j| match j {
        0 => 1.0,
        1 => f64::from(data.treatment()[i]),
        _ => data.row(i)[cols[j - 2]],
    });
    let y = DVector::from_column_slice(data.outcome());
    let mut regressors = vec!["intercept".to_string(), "treatment".to_string()];
    regressors.extend(cols.iter().map(|&j| data.columns()[j].name.clone()));

    let xtx = x.transpose() * &x;
    let Some(chol) = xtx.cholesky() else {
        return Err(Error::RankDeficient(collinear_columns(&x, &regressors)));
    };
    let beta = chol.solve(&(x.transpose() * &y));
    // a factorization can succeed on a numerically singular design
    let collinear = collinear_columns(&x, &regressors);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear));
    }
    let resid = &y - &x * &beta;
    let df = n - k;
    let sigma2 = resid.norm_squared() / df as f64;
    let mut e = DVector::zeros(k);
    e[1] = 1.0;
    let var_t = chol.solve(&e)[1] * sigma2;
    let se = var_t.max(0.0).sqrt();
    let ate = beta[1];
    let (ci_low, ci_high, p_value) = if se > 0.0 {
        let t = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::invalid(e.to_string()))?;
        let q = t.inverse_cdf(0.975);
        let p = 2.0 * (1.0 - t.cdf((ate / se).abs()));
        (ate - q * se, ate + q * se, p.clamp(0.0, 1.0))
    } else {
        (ate, ate, if ate == 0.0 { 1.0 } else { 0.0 })
    };
    Ok(LinearFit {
        ate,
        std_error: se,
        ci_low,
        ci_high,
        p_value,
        df,
        regressors,
        coefficients: beta.iter().copied().collect(),
    })
}

/// Names of columns that are (numerically) linear combinations of earlier
/// ones, by modified Gram-Schmidt.
fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        for q in &basis {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        let norm = v.norm();
        if norm <= 1e-9 * norm0.max(1e-300) {
            out.push(names[j].clone());
        } else {
            basis.push(v / norm);
        }
    }
    out
}
