//! Robustness checks run against any effect estimator.
//!
//! Every check first re-runs the estimator on the unmodified data to get the
//! reference estimate, then compares it with estimates on perturbed copies.
//! Repetition `r` of a check draws its perturbation and its estimator seed
//! from its own random stream, so results do not depend on the thread count.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::EvalDataset;
use crate::exec::map_indexed;
use crate::rng::{derive_seed, stream, Rng};
use crate::stats::{mean, pop_std, sample_std, two_sided_normal_p};
use crate::{Error, Result};

pub const PASS_LEVEL: f64 = 0.05;
pub const DEFAULT_REPETITIONS: usize = 100;
pub const DEFAULT_DROP_FRACTION: f64 = 0.1;
pub const RANDOM_COLUMN: &str = "random_common_cause";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefutationTest {
    Placebo,
    Rcc,
    Rsr,
    Ucc,
}

impl RefutationTest {
    pub fn name(self) -> &'static str {
        match self {
            RefutationTest::Placebo => "placebo",
            RefutationTest::Rcc => "rcc",
            RefutationTest::Rsr => "rsr",
            RefutationTest::Ucc => "ucc",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for RefutationTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefutationResult {
    pub test: RefutationTest,
    pub original_ate: f64,
    /// Mean estimate over repetitions (over grid cells for UCC).
    pub new_effect: f64,
    /// Standard deviation of the repetition estimates.
    pub effect_sd: f64,
    pub p_value: Option<f64>,
    pub passed: bool,
    pub repetitions: usize,
    pub failed: usize,
}

/// A point estimator: data and a seed in, ATE out.
pub trait Estimator: Fn(&EvalDataset, u64) -> Result<f64> + Sync + Send {}
impl<F: Fn(&EvalDataset, u64) -> Result<f64> + Sync + Send> Estimator for F {}

fn check_reps(reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(Error::InvalidRepetitions(reps));
    }
    Ok(())
}

fn rep_rng(seed: u64, test: RefutationTest, rep: usize) -> Rng {
    stream(derive_seed(seed, test.tag()), rep as u64)
}

/// Run `reps` perturbed estimates and summarize them against `null`.
fn run_reps<E, P>(
    test: RefutationTest,
    estimator: &E,
    data: &EvalDataset,
    reps: usize,
    seed: u64,
    threads: usize,
    perturb: P,
    null_is_zero: bool,
) -> Result<RefutationResult>
where
    E: Estimator,
    P: Fn(&EvalDataset, &mut Rng) -> Result<EvalDataset> + Sync + Send,
{
    check_reps(reps)?;
    let original = estimator(data, seed)?;
    let results = map_indexed(reps, threads, |r| {
        let mut rng = rep_rng(seed, test, r);
        let perturbed = perturb(data, &mut rng);
        let inner = rng.next_u64();
        perturbed.and_then(|d| estimator(&d, inner))
    });
    let mut effects = Vec::with_capacity(reps);
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) if v.is_finite() => effects.push(v),
            Ok(_) => log::debug!("{test} repetition {r} gave a non-finite estimate"),
            Err(e) => log::debug!("{test} repetition {r} failed: {e}"),
        }
    }
    let failed = reps - effects.len();
    if failed as f64 > 0.1 * reps as f64 {
        return Err(Error::TooManyFailures { failed, total: reps });
    }
    let new_effect = mean(&effects);
    let sd = sample_std(&effects);
    let null = if null_is_zero { 0.0 } else { original };
    let p = two_sided_normal_p(new_effect - null, sd);
    Ok(RefutationResult {
        test,
        original_ate: original,
        new_effect,
        effect_sd: sd,
        p_value: Some(p),
        passed: p > PASS_LEVEL,
        repetitions: reps,
        failed,
    })
}

/// Re-estimate with the treatment randomly permuted; the effect should
/// vanish.
pub fn refute_placebo<E: Estimator>(
    estimator: &E,
    data: &EvalDataset,
    reps: usize,
    seed: u64,
    threads: usize,
) -> Result<RefutationResult> {
    run_reps(
        RefutationTest::Placebo,
        estimator,
        data,
        reps,
        seed,
        threads,
        |d, rng| {
            let mut t = d.treatment().to_vec();
            t.shuffle(rng);
            d.with_treatment(t)
        },
        true,
    )
}

/// Re-estimate with an extra independent standard-normal covariate; the
/// effect should not move.
pub fn refute_random_common_cause<E: Estimator>(
    estimator: &E,
    data: &EvalDataset,
    reps: usize,
    seed: u64,
    threads: usize,
) -> Result<RefutationResult> {
    run_reps(
        RefutationTest::Rcc,
        estimator,
        data,
        reps,
        seed,
        threads,
        |d, rng| {
            let z: Vec<f64> = (0..d.n_rows()).map(|_| StandardNormal.sample(rng)).collect();
            d.with_column(RANDOM_COLUMN, &z)
        },
        false,
    )
}

/// Rows kept after dropping ⌊fraction·n⌋ rows, split across the arms in
/// proportion to their sizes. Kept rows stay in their original order.
pub fn subset_without(data: &EvalDataset, fraction: f64, rng: &mut Rng) -> Vec<usize> {
    let n = data.n_rows();
    let total = (fraction * n as f64).floor() as usize;
    let treated = data.group_indices(1);
    let drop_t = ((total as f64 * treated.len() as f64 / n as f64).round() as usize).min(treated.len());
    let drop_c = total - drop_t;
    let mut dropped = vec![false; n];
    for (arm, k) in [(0u8, drop_c), (1, drop_t)] {
        let mut rows = data.group_indices(arm);
        let k = k.min(rows.len());
        let (chosen, _) = rows.partial_shuffle(rng, k);
        for &i in chosen.iter() {
            dropped[i] = true;
        }
    }
    (0..n).filter(|&i| !dropped[i]).collect()
}

/// Re-estimate after randomly removing a share of the rows; the effect
/// should not move.
pub fn refute_subset_removal<E: Estimator>(
    estimator: &E,
    data: &EvalDataset,
    drop_fraction: f64,
    reps: usize,
    seed: u64,
    threads: usize,
) -> Result<RefutationResult> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::invalid(format!("drop fraction {drop_fraction} outside [0, 1)")));
    }
    run_reps(
        RefutationTest::Rsr,
        estimator,
        data,
        reps,
        seed,
        threads,
        |d, rng| Ok(d.subset(&subset_without(d, drop_fraction, rng))),
        false,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UccGrid {
    pub kappa_t: Vec<f64>,
    pub kappa_y: Vec<f64>,
    /// `estimates[i][j]` is the estimate at (`kappa_t[i]`, `kappa_y[j]`);
    /// `None` where the estimator failed.
    pub estimates: Vec<Vec<Option<f64>>>,
    pub mean_estimate: f64,
    pub original_ate: f64,
}

impl UccGrid {
    pub fn result(&self) -> RefutationResult {
        let present: Vec<f64> = self.estimates.iter().flatten().flatten().copied().collect();
        let cells = self.kappa_t.len() * self.kappa_y.len();
        RefutationResult {
            test: RefutationTest::Ucc,
            original_ate: self.original_ate,
            new_effect: self.mean_estimate,
            effect_sd: sample_std(&present),
            p_value: None,
            // stable sign under confounding is the only verdict we draw
            passed: present.iter().all(|v| v.signum() == self.original_ate.signum()),
            repetitions: cells,
            failed: cells - present.len(),
        }
    }

    /// Matrix with `kappa_t` down the rows and `kappa_y` across the columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["kappa_t".to_string()];
        header.extend(self.kappa_y.iter().map(|k| format!("kappa_y={k}")));
        wtr.write_record(&header)?;
        for (kt, row) in self.kappa_t.iter().zip(&self.estimates) {
            let mut rec = vec![kt.to_string()];
            rec.extend(row.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Default strength grid {0, 0.1, ..., 0.5}.
pub fn default_kappas() -> Vec<f64> {
    (0..=5).map(|k| k as f64 / 10.0).collect()
}

/// Simulate an unobserved confounder U ~ N(0, 1) acting on both channels:
/// with probability κ_t a row's treatment is replaced by 1[U > 0], and the
/// outcome is shifted by κ_y·σ_Y·U. U is not added to the covariates.
///
/// All cells share one draw of U and of the replacement uniforms, so the
/// grid varies only through the strengths.
pub fn refute_unobserved_common_cause<E: Estimator>(
    estimator: &E,
    data: &EvalDataset,
    kappa_t: &[f64],
    kappa_y: &[f64],
    seed: u64,
    threads: usize,
) -> Result<UccGrid> {
    if kappa_t.is_empty() || kappa_y.is_empty() {
        return Err(Error::invalid("UCC strength grids must not be empty"));
    }
    if let Some(k) = kappa_t.iter().find(|k| !(0.0..=0.5).contains(*k)) {
        return Err(Error::invalid(format!("kappa_t {k} outside [0, 0.5]")));
    }
    if let Some(k) = kappa_y.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
        return Err(Error::invalid(format!("kappa_y {k} must be non-negative")));
    }
    let original = estimator(data, seed)?;
    let n = data.n_rows();
    let mut rng = rep_rng(seed, RefutationTest::Ucc, 0);
    let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let sigma_y = pop_std(data.outcome());

    let cells = kappa_t.len() * kappa_y.len();
    let flat = map_indexed(cells, threads, |c| {
        let (kt, ky) = (kappa_t[c / kappa_y.len()], kappa_y[c % kappa_y.len()]);
        let t: Vec<u8> = (0..n)
            .map(|i| if v[i] < kt { u8::from(u[i] > 0.0) } else { data.treatment()[i] })
            .collect();
        let y: Vec<f64> = (0..n).map(|i| data.outcome()[i] + ky * sigma_y * u[i]).collect();
        let perturbed = if kt == 0.0 {
            data.with_outcome(y)
        } else {
            data.with_treatment(t).and_then(|d| d.with_outcome(y))
        };
        match perturbed.and_then(|d| estimator(&d, seed)) {
            Ok(x) if x.is_finite() => Some(x),
            Ok(_) => None,
            Err(e) => {
                log::debug!("UCC cell ({kt}, {ky}) failed: {e}");
                None
            }
        }
    });
    let estimates: Vec<Vec<Option<f64>>> = flat.chunks(kappa_y.len()).map(<[_]>::to_vec).collect();
    let present: Vec<f64> = flat.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::TooManyFailures {
            failed: cells,
            total: cells,
        });
    }
    Ok(UccGrid {
        kappa_t: kappa_t.to_vec(),
        kappa_y: kappa_y.to_vec(),
        estimates,
        mean_estimate: mean(&present),
        original_ate: original,
    })
}
