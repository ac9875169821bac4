//! On-disk inputs for end-to-end runs: coarse and fine forecast grids for a
//! run of issue dates, synthetic fields placed on the grid, a station series
//! and NDVI observations.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Days, NaiveDate};
use sowcause::dataset::{write_fields_csv, FieldRecord};
use sowcause::scm::{generate, ScmConfig};
use sowcause::weathergrid::{write_grid_csv, DailyWeather, ForecastGrid, GridPoint};

pub const ISSUE_DAYS: u64 = 12;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sowcause"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn first_issue() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 4, 1).unwrap()
}

pub fn fine_points() -> Vec<GridPoint> {
    let mut pts = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            pts.push(GridPoint::new(37.0 + 0.1 * i as f64, 22.0 + 0.1 * j as f64).unwrap());
        }
    }
    pts
}

pub fn coarse_points() -> Vec<GridPoint> {
    let mut pts = Vec::new();
    for lat in [36.9, 37.4] {
        for lon in [21.9, 22.4] {
            pts.push(GridPoint::new(lat, lon).unwrap());
        }
    }
    pts
}

/// Soil warms with the issue date and from south-west to north-east, so each
/// date splits the grid into top-level and lower-level points.
pub fn fine_weather(day: u64, point: usize) -> DailyWeather {
    let gradient = (point / 4 + point % 4) as f64;
    let soil = 16.0 + 0.3 * day as f64 + 0.45 * gradient;
    DailyWeather::from_celsius(13.0, 28.0, soil, 12.0).unwrap()
}

pub fn coarse_weather(day: u64, lead: usize) -> DailyWeather {
    // gentle warming so the trend factors are not all 1
    let k = 0.02 * lead as f64;
    DailyWeather::from_celsius(12.0 + k, 27.0 + k, 17.0 + 0.1 * day as f64 + k, 11.0 + k).unwrap()
}

pub fn grids() -> (Vec<ForecastGrid>, Vec<ForecastGrid>) {
    let mut coarse = Vec::new();
    let mut fine = Vec::new();
    for d in 0..ISSUE_DAYS {
        let issue = first_issue() + Days::new(d);
        coarse.push(ForecastGrid::from_fn(issue, coarse_points(), 10, 0.0, |_, lead| coarse_weather(d, lead)).unwrap());
        fine.push(ForecastGrid::from_fn(issue, fine_points(), 2, 0.0, |p, _| fine_weather(d, p)).unwrap());
    }
    (coarse, fine)
}

pub fn fields(n: usize, seed: u64) -> Vec<FieldRecord> {
    let cfg = ScmConfig {
        n,
        seed,
        ..ScmConfig::default()
    };
    let pts = fine_points();
    generate(&cfg)
        .unwrap()
        .fields
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let sowing = first_issue() + Days::new(i as u64 % ISSUE_DAYS);
            let p = pts[(i * 7) % pts.len()];
            FieldRecord {
                sowing_date: sowing,
                harvest_date: sowing + Days::new(150),
                location: Some(GridPoint::new(p.lat + 0.01, p.lon - 0.01).unwrap()),
                treatment: None,
                ..f
            }
        })
        .collect()
}

/// Write every input plus `run.conf` into `dir` and return the config path.
pub fn write_inputs(dir: &Path, n_fields: usize, extra_config: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let (coarse, fine) = grids();
    write_grid_csv(std::fs::File::create(dir.join("coarse.csv")).unwrap(), &coarse).unwrap();
    write_grid_csv(std::fs::File::create(dir.join("fine.csv")).unwrap(), &fine).unwrap();
    let fields = fields(n_fields, 5);
    write_fields_csv(std::fs::File::create(dir.join("fields.csv")).unwrap(), &fields).unwrap();

    let mut station = String::from("date,t2m_min_c,t2m_max_c,st10_mean_c,st10_min_c\n");
    for d in 0..ISSUE_DAYS + 10 {
        let date = first_issue() + Days::new(d);
        let w = 0.5 * ((d % 3) as f64 - 1.0);
        writeln!(station, "{date},{},{},{},", 13.0 + w, 28.0 - w, 16.0 + 0.3 * d as f64 + 0.9 + w).unwrap();
    }
    std::fs::write(dir.join("station.csv"), station).unwrap();

    let mut ndvi = String::from("field_id,date,ndvi\n");
    for f in fields.iter().take(40) {
        for k in 0..6u64 {
            let date = f.sowing_date + Days::new(30 * k);
            let v = 0.2 + 0.1 * k as f64 - 0.012 * (k * k) as f64;
            writeln!(ndvi, "{},{date},{v}", f.field_id).unwrap();
        }
    }
    std::fs::write(dir.join("ndvi.csv"), ndvi).unwrap();

    let config = format!(
        "# end-to-end fixture\n\
         coarse = coarse.csv\n\
         fine = fine.csv\n\
         fields = fields.csv\n\
         station = station.csv\n\
         station_lat = 37.1\n\
         station_lon = 22.1\n\
         ndvi = ndvi.csv\n\
         out_dir = out\n\
         {extra_config}\n"
    );
    let path = dir.join("run.conf");
    std::fs::write(&path, config).unwrap();
    path
}
