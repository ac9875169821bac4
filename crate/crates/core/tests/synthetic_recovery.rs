use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sowcause::dataset::EvalDataset;
use sowcause::estimators::{
    bootstrap, estimate, fit_propensity, point_estimate, refit_estimator, trim, EstimateOptions, ForestParams,
    Method,
};
use sowcause::refutation::{default_kappas, refute_placebo, refute_unobserved_common_cause};
use sowcause::rng::stream;
use sowcause::scm::{generate, oracle_ate, ScmConfig};

fn trimmed(seed: u64) -> EvalDataset {
    let syn = generate(&ScmConfig {
        seed,
        ..ScmConfig::default()
    })
    .unwrap();
    let model = fit_propensity(&syn.dataset).unwrap();
    trim(&syn.dataset, &model.scores, 0.2, 0.8).unwrap().0
}

#[test]
fn oracle_agrees_with_analytic_truth() {
    let cfg = ScmConfig::default();
    assert_eq!(cfg.analytic_ate(), 4.0);
    for n_mc in [10_000, 100_000] {
        let (ate, err) = oracle_ate(&cfg, n_mc, 1).unwrap();
        assert!(err < 0.05);
        assert!((ate - 4.0).abs() <= 3.0 * err + 1e-9, "{ate} ± {err}");
    }
    let null = ScmConfig {
        beta_t: 0.0,
        ..ScmConfig::default()
    };
    let (ate, err) = oracle_ate(&null, 10_000, 1).unwrap();
    assert!(ate.abs() <= 3.0 * err + 1e-12);
}

#[test]
fn point_estimates_recover_the_default_effect() {
    let data = trimmed(0);
    let forest = ForestParams::default();
    for (m, tol) in [
        (Method::Linear, 0.3),
        (Method::Matching, 0.4),
        (Method::Ips, 0.4),
        (Method::Tlearner, 0.5),
        (Method::Xlearner, 0.5),
    ] {
        let ate = point_estimate(m, &data, &forest, 0).unwrap();
        assert!((ate - 4.0).abs() <= tol, "{}: {ate}", m.name());
    }
}

#[test]
fn scaled_columns_are_standardized() {
    let syn = generate(&ScmConfig::default()).unwrap();
    let d = &syn.dataset;
    for (j, col) in d.columns().iter().enumerate() {
        if let sowcause::dataset::ColumnKind::Scaled { .. } = col.kind {
            let v = d.column(j);
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9, "{}: {m} {sd}", col.name);
        }
    }
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let data = trimmed(2);
    for m in [Method::Ips, Method::Tlearner] {
        let run = |threads| {
            let opts = EstimateOptions {
                bootstrap_iterations: 100,
                seed: 9,
                threads,
                forest: ForestParams {
                    n_trees: 30,
                    ..ForestParams::default()
                },
                ..EstimateOptions::default()
            };
            estimate(m, &data, &opts).unwrap()
        };
        assert_eq!(run(1), run(3));
    }
}

#[test]
fn bootstrap_mean_is_calibrated() {
    let mut covered = 0;
    let mut widths = Vec::new();
    for seed in 0..40 {
        let mut rng = stream(seed, 0);
        let n = 1000;
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
        let data = EvalDataset::new(t, y, x, vec!["x".into()]).unwrap();
        let mean = |d: &EvalDataset, _: u64| Ok(d.outcome().iter().sum::<f64>() / d.n_rows() as f64);
        let point = mean(&data, 0).unwrap();
        let s = bootstrap(mean, &data, point, 200, seed, 0.0, 1).unwrap();
        covered += usize::from(s.p_value > 0.05);
        widths.push(s.ci_high - s.ci_low);
    }
    assert!(covered >= 36, "{covered}/40");
    let w = widths.iter().sum::<f64>() / widths.len() as f64;
    assert!((w - 0.124).abs() < 0.02, "mean CI width {w}");
}

#[test]
fn estimators_stay_quiet_without_an_effect() {
    // Y independent of T: |ATE| < 3 bootstrap SDs in at least 95% of trials
    let forest = ForestParams {
        n_trees: 20,
        ..ForestParams::default()
    };
    let trials = 100;
    let mut quiet = vec![0; Method::ALL.len()];
    for seed in 0..trials {
        let mut rng = stream(seed, 3);
        let n = 200;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![StandardNormal.sample(&mut rng), rng.random()]).collect();
        let t: Vec<u8> = x.iter().map(|r| u8::from(rng.random::<f64>() < 0.3 + 0.4 * r[1])).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| {
                let e: f64 = StandardNormal.sample(&mut rng);
                r[0] + e
            })
            .collect();
        let data = EvalDataset::new(t, y, x, vec!["a".into(), "b".into()]).unwrap();
        for (k, &m) in Method::ALL.iter().enumerate() {
            let est = refit_estimator(m, forest.clone());
            let point = est(&data, seed).unwrap();
            let s = bootstrap(&est, &data, point, 100, seed, 0.0, 1).unwrap();
            quiet[k] += usize::from(point.abs() < 3.0 * s.std_dev);
        }
    }
    for (m, q) in Method::ALL.iter().zip(&quiet) {
        assert!(*q >= 95, "{}: {q}/{trials}", m.name());
    }
}

#[test]
fn placebo_removes_the_effect() {
    let est = refit_estimator(Method::Linear, ForestParams::default());
    let mut ok = 0;
    for seed in 0..20 {
        let r = refute_placebo(&est, &trimmed(seed), 100, seed, 1).unwrap();
        ok += usize::from(r.new_effect.abs() < 0.5 && r.passed);
    }
    assert!(ok >= 18, "{ok}/20");
}

#[test]
fn outcome_only_confounding_leaves_the_estimate() {
    let data = trimmed(4);
    let est = refit_estimator(Method::Linear, ForestParams::default());
    let kappas = default_kappas();
    let grid = refute_unobserved_common_cause(&est, &data, &[0.0], &kappas, 4, 1).unwrap();
    for v in grid.estimates[0].iter().flatten() {
        assert!((v - grid.original_ate).abs() < 0.3, "{v} vs {}", grid.original_ate);
    }
}
