use chrono::{Days, NaiveDate};
use proptest::prelude::*;
use sowcause::sowing::{binarize, default_rules, evaluate, level};
use sowcause::weathergrid::{
    compose_art, error_metrics, read_grid_csv, trend_factors, write_grid_csv, DailyWeather, ForecastGrid, GridPoint,
    Variable,
};

fn issue() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 4, 10).unwrap()
}

fn weather(t_min: f64, spread: f64, st_mean: f64, st_gap: f64) -> DailyWeather {
    DailyWeather::from_celsius(t_min, t_min + spread, st_mean, st_mean - st_gap).unwrap()
}

fn day_strategy() -> impl Strategy<Value = DailyWeather> {
    (5.0..20.0f64, 0.0..20.0f64, 10.0..25.0f64, 0.0..8.0f64).prop_map(|(a, b, c, d)| weather(a, b, c, d))
}

fn grid_strategy(horizon: usize) -> impl Strategy<Value = Vec<DailyWeather>> {
    proptest::collection::vec(day_strategy(), 9 * horizon)
}

fn lattice(lat0: f64, lon0: f64, step: f64) -> Vec<GridPoint> {
    (0..3)
        .flat_map(|i| (0..3).map(move |j| GridPoint::new(lat0 + step * i as f64, lon0 + step * j as f64).unwrap()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rmse_is_never_below_mae(pairs in proptest::collection::vec((250.0..320.0f64, 250.0..320.0f64), 1..60)) {
        let m = error_metrics(&pairs).unwrap();
        prop_assert!(m.rmse >= m.mae);
        prop_assert!(m.mae >= 0.0);
        prop_assert_eq!(m.n, pairs.len());
    }

    #[test]
    fn blended_ratios_follow_coarse_trends(fine in grid_strategy(2), coarse in grid_strategy(10)) {
        let fine = ForecastGrid::new(issue(), lattice(40.0, 20.0, 0.05), 2, fine, 0.0).unwrap();
        let coarse = ForecastGrid::new(issue(), lattice(39.95, 19.95, 0.1), 10, coarse, 0.0).unwrap();
        let art = compose_art(&fine, &coarse).unwrap();
        for (p, point) in fine.points().iter().enumerate() {
            prop_assert_eq!(art.value(p, 1), fine.value(p, 1));
            prop_assert_eq!(art.value(p, 2), fine.value(p, 2));
            for v in Variable::ALL {
                let a = trend_factors(&coarse, point, v).unwrap();
                for (day, factor) in a.days() {
                    let ratio = art.value(p, day).get(v) / art.value(p, 1).get(v);
                    prop_assert!(((ratio - factor) / factor).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn warming_never_lowers_the_level(
        window in proptest::collection::vec(day_strategy(), 10),
        day in 0..10usize,
        var in 0..4usize,
        delta in 0.0..5.0f64,
    ) {
        let rules = default_rules();
        let before = level(&rules, &evaluate(&rules, &window).unwrap());
        let mut warmer = window.clone();
        let v = Variable::ALL[var];
        let w = &mut warmer[day];
        w.set(v, w.get(v) + delta);
        // keep min <= max and min <= mean after the bump
        w.t2m_max = w.t2m_max.max(w.t2m_min);
        w.st10_mean = w.st10_mean.max(w.st10_min);
        let after = level(&rules, &evaluate(&rules, &warmer).unwrap());
        prop_assert!(after >= before, "{} -> {}", before, after);
        prop_assert_eq!(binarize(after), u8::from(after == 3));
    }
}

#[test]
fn grid_csv_round_trip_keeps_blended_values() {
    let fine = ForecastGrid::from_fn(issue(), lattice(40.0, 20.0, 0.05), 2, 0.0, |p, lead| {
        weather(10.0 + p as f64 * 0.1, 12.0, 18.0 + lead as f64, 3.0)
    })
    .unwrap();
    let coarse = ForecastGrid::from_fn(issue(), lattice(39.95, 19.95, 0.1), 10, 0.0, |p, lead| {
        weather(9.0 + 0.3 * lead as f64, 14.0, 17.0 + 0.05 * (p + lead) as f64, 2.0)
    })
    .unwrap();
    let art = compose_art(&fine, &coarse).unwrap();
    let mut buf = Vec::new();
    write_grid_csv(&mut buf, &[art.clone()]).unwrap();
    let back = read_grid_csv(buf.as_slice(), Some(0.0)).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].valid_date(10), issue() + Days::new(9));
    for p in 0..9 {
        for lead in 1..=10 {
            for v in Variable::ALL {
                let (a, b) = (art.value(p, lead).get(v), back[0].value(p, lead).get(v));
                assert!((a - b).abs() < 1e-9, "point {p} lead {lead} {v:?}: {a} vs {b}");
            }
        }
    }
}
