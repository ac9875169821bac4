//! Average treatment effect estimators and their bootstrap.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::EvalDataset;
use crate::{Error, Result};

pub mod bootstrap;
pub mod forest;
mod ips;
mod learners;
mod linear;
mod matching;
pub mod propensity;

pub use bootstrap::{bootstrap, BootstrapSummary};
pub use forest::{fit_forest, Forest, ForestParams};
pub use ips::ate_ips;
pub use learners::{ate_tlearner, ate_xlearner};
pub use linear::{ate_linear, LinearFit};
pub use matching::ate_matching;
pub use propensity::{fit_propensity, trim, ClassificationMetrics, PropensityModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Linear,
    Matching,
    Ips,
    Tlearner,
    Xlearner,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Linear,
        Method::Matching,
        Method::Ips,
        Method::Tlearner,
        Method::Xlearner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Linear => "linear",
            Method::Matching => "matching",
            Method::Ips => "ips",
            Method::Tlearner => "tlearner",
            Method::Xlearner => "xlearner",
        }
    }

    fn needs_propensity(self) -> bool {
        matches!(self, Method::Ips | Method::Xlearner)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method `{s}` (expected linear, matching, ips, tlearner or xlearner)"
                ))
            })
    }
}

/// Parse a comma-separated method list such as `linear,ips`.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out: Vec<Method> = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("empty method list"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: Method,
    pub ate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub seed: u64,
    pub b_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub bootstrap_iterations: usize,
    pub seed: u64,
    pub forest: ForestParams,
    pub threads: usize,
    /// Effect size the p-value tests against.
    pub null_value: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            bootstrap_iterations: 1000,
            seed: 0,
            forest: ForestParams::default(),
            threads: 1,
            null_value: 0.0,
        }
    }
}

/// Point estimate of the ATE with `method`.
///
/// IPS and the X-learner use the propensity scores attached to `data` when
/// present and fit a logistic model otherwise. `seed` only matters for the
/// forest learners.
pub fn point_estimate(method: Method, data: &EvalDataset, forest: &ForestParams, seed: u64) -> Result<f64> {
    let scores;
    let scores_ref = if method.needs_propensity() {
        match data.propensity() {
            Some(s) => s,
            None => {
                scores = fit_propensity(data)?.scores;
                &scores
            }
        }
    } else {
        &[][..]
    };
    match method {
        Method::Linear => Ok(ate_linear(data)?.ate),
        Method::Matching => ate_matching(data),
        Method::Ips => ate_ips(data, scores_ref),
        Method::Tlearner => ate_tlearner(data, forest, seed),
        Method::Xlearner => ate_xlearner(data, scores_ref, forest, seed),
    }
}

/// The whole estimation procedure for `method` as a closure, for refutation
/// checks: propensity scores are always refit on the data passed in, so the
/// unperturbed and perturbed estimates are computed the same way.
pub fn refit_estimator(
    method: Method,
    forest: ForestParams,
) -> impl Fn(&EvalDataset, u64) -> Result<f64> + Send + Sync {
    move |d: &EvalDataset, seed: u64| {
        if method.needs_propensity() && d.propensity().is_some() {
            point_estimate(method, &d.without_propensity(), &forest, seed)
        } else {
            point_estimate(method, d, &forest, seed)
        }
    }
}

/// Point estimate plus stratified bootstrap CI and p-value.
pub fn estimate(method: Method, data: &EvalDataset, opts: &EstimateOptions) -> Result<EffectEstimate> {
    let ate = point_estimate(method, data, &opts.forest, opts.seed)?;
    let summary = bootstrap(
        |d: &EvalDataset, s: u64| point_estimate(method, d, &opts.forest, s),
        data,
        ate,
        opts.bootstrap_iterations,
        opts.seed,
        opts.null_value,
        opts.threads,
    )?;
    Ok(EffectEstimate {
        method,
        ate,
        ci_low: summary.ci_low,
        ci_high: summary.ci_high,
        p_value: summary.p_value,
        n_treated: data.n_treated(),
        n_control: data.n_control(),
        seed: opts.seed,
        b_iterations: opts.bootstrap_iterations,
    })
}

pub(crate) fn require_both_groups(data: &EvalDataset) -> Result<()> {
    if data.n_treated() == 0 || data.n_control() == 0 {
        return Err(Error::SingleClass);
    }
    Ok(())
}
