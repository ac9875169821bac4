//! Forecast grids, daily aggregation, coarse/fine blending and verification.
//!
//! All temperatures are held in kelvin. Celsius only appears in the CSV
//! readers and writers.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, Days, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::{celsius_to_kelvin, kelvin_to_celsius, Error, Result};

const EARTH_RADIUS_M: f64 = 6_371_008.8;
const METERS_PER_DEGREE: f64 = 111_320.0;

/// Plausible range for any stored temperature.
pub const MIN_KELVIN: f64 = 180.0;
pub const MAX_KELVIN: f64 = 340.0;

/// Length of a blended forecast, and the lead days that get trend factors.
pub const ART_HORIZON: usize = 10;
const FIRST_TREND_DAY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GridPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::invalid(format!(
                "coordinates ({lat}, {lon}) outside WGS84 range"
            )));
        }
        Ok(Self { lat, lon })
    }

    /// Great-circle (haversine) distance in meters.
    pub fn distance_m(&self, other: &GridPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dp = p2 - p1;
        let dl = (other.lon - self.lon).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
    }
}

/// Selects one of the four daily statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    T2mMin,
    T2mMax,
    St10Mean,
    St10Min,
}

impl Variable {
    pub const ALL: [Variable; 4] = [
        Variable::T2mMin,
        Variable::T2mMax,
        Variable::St10Mean,
        Variable::St10Min,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::T2mMin => "t2m_min",
            Variable::T2mMax => "t2m_max",
            Variable::St10Mean => "st10_mean",
            Variable::St10Min => "st10_min",
        }
    }

    pub fn is_soil(self) -> bool {
        matches!(self, Variable::St10Mean | Variable::St10Min)
    }
}

impl std::str::FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variable `{s}`")))
    }
}

/// Daily statistics of 2 m air and 0-10 cm soil temperature, in kelvin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyWeather {
    pub t2m_min: f64,
    pub t2m_max: f64,
    pub st10_mean: f64,
    pub st10_min: f64,
}

impl DailyWeather {
    pub fn new(t2m_min: f64, t2m_max: f64, st10_mean: f64, st10_min: f64) -> Result<Self> {
        let w = Self {
            t2m_min,
            t2m_max,
            st10_mean,
            st10_min,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn from_celsius(t2m_min: f64, t2m_max: f64, st10_mean: f64, st10_min: f64) -> Result<Self> {
        Self::new(
            celsius_to_kelvin(t2m_min),
            celsius_to_kelvin(t2m_max),
            celsius_to_kelvin(st10_mean),
            celsius_to_kelvin(st10_min),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for v in Variable::ALL {
            let k = self.get(v);
            if !(MIN_KELVIN..=MAX_KELVIN).contains(&k) {
                return Err(Error::InvalidTemperature(k));
            }
        }
        if self.t2m_min > self.t2m_max {
            return Err(Error::invalid(format!(
                "t2m_min {} K exceeds t2m_max {} K",
                self.t2m_min, self.t2m_max
            )));
        }
        if self.st10_min > self.st10_mean {
            return Err(Error::invalid(format!(
                "st10_min {} K exceeds st10_mean {} K",
                self.st10_min, self.st10_mean
            )));
        }
        Ok(())
    }

    pub fn get(&self, v: Variable) -> f64 {
        match v {
            Variable::T2mMin => self.t2m_min,
            Variable::T2mMax => self.t2m_max,
            Variable::St10Mean => self.st10_mean,
            Variable::St10Min => self.st10_min,
        }
    }

    pub fn set(&mut self, v: Variable, value: f64) {
        match v {
            Variable::T2mMin => self.t2m_min = value,
            Variable::T2mMax => self.t2m_max = value,
            Variable::St10Mean => self.st10_mean = value,
            Variable::St10Min => self.st10_min = value,
        }
    }
}

/// Daily weather statistics over a set of points and lead days.
///
/// Lead day 1 is valid on `issue_date`; lead day `d` on `issue_date + d - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastGrid {
    issue_date: NaiveDate,
    points: Vec<GridPoint>,
    horizon: usize,
    // point-major: values[point * horizon + lead - 1]
    values: Vec<DailyWeather>,
    resolution_m: f64,
}

impl ForecastGrid {
    pub fn new(
        issue_date: NaiveDate,
        points: Vec<GridPoint>,
        horizon: usize,
        values: Vec<DailyWeather>,
        resolution_m: f64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("forecast horizon must be at least 1"));
        }
        if points.is_empty() {
            return Err(Error::invalid("forecast grid has no points"));
        }
        if values.len() != points.len() * horizon {
            return Err(Error::invalid(format!(
                "expected {} values for {} points x {} days, got {}",
                points.len() * horizon,
                points.len(),
                horizon,
                values.len()
            )));
        }
        if !(resolution_m >= 0.0) {
            return Err(Error::invalid("grid resolution must be non-negative"));
        }
        Ok(Self {
            issue_date,
            points,
            horizon,
            values,
            resolution_m,
        })
    }

    /// Build a grid from a closure giving the value at (point index, lead day).
    pub fn from_fn(
        issue_date: NaiveDate,
        points: Vec<GridPoint>,
        horizon: usize,
        resolution_m: f64,
        mut f: impl FnMut(usize, usize) -> DailyWeather,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(points.len() * horizon);
        for p in 0..points.len() {
            for lead in 1..=horizon {
                values.push(f(p, lead));
            }
        }
        Self::new(issue_date, points, horizon, values, resolution_m)
    }

    pub fn issue_date(&self) -> NaiveDate {
        self.issue_date
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn resolution_m(&self) -> f64 {
        self.resolution_m
    }

    /// Value at `point` for lead day `lead` (1-based).
    pub fn value(&self, point: usize, lead: usize) -> &DailyWeather {
        assert!(lead >= 1 && lead <= self.horizon, "lead day {lead} out of range");
        &self.values[point * self.horizon + lead - 1]
    }

    /// All lead days at one point.
    pub fn series(&self, point: usize) -> &[DailyWeather] {
        &self.values[point * self.horizon..(point + 1) * self.horizon]
    }

    pub fn valid_date(&self, lead: usize) -> NaiveDate {
        self.issue_date + Days::new(lead as u64 - 1)
    }

    /// True if `query` lies inside the points' bounding box widened by half
    /// the grid resolution.
    pub fn covers(&self, query: &GridPoint) -> bool {
        bbox_contains(&self.points, query, self.resolution_m / 2.0)
    }
}

pub(crate) fn bbox_contains(points: &[GridPoint], query: &GridPoint, margin_m: f64) -> bool {
    let (mut lat0, mut lat1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lon0, mut lon1) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        lat0 = lat0.min(p.lat);
        lat1 = lat1.max(p.lat);
        lon0 = lon0.min(p.lon);
        lon1 = lon1.max(p.lon);
    }
    let dlat = margin_m / METERS_PER_DEGREE + 1e-9;
    let coslat = query.lat.to_radians().cos().max(1e-6);
    let dlon = margin_m / (METERS_PER_DEGREE * coslat) + 1e-9;
    query.lat >= lat0 - dlat
        && query.lat <= lat1 + dlat
        && query.lon >= lon0 - dlon
        && query.lon <= lon1 + dlon
}

/// Index of the point closest to `query` by great-circle distance, lowest
/// index on ties. `None` for an empty slice.
pub fn nearest_index(points: &[GridPoint], query: &GridPoint) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = p.distance_m(query);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Nearest grid point to `query`; grids are never empty.
pub fn nearest_point(grid: &ForecastGrid, query: &GridPoint) -> usize {
    nearest_index(grid.points(), query).expect("grids are non-empty")
}

/// One hourly sample: timestamp, 2 m air temperature and 0-10 cm soil
/// temperature, both in kelvin.
pub type HourlySample = (DateTime<Utc>, f64, f64);

/// Reduce one UTC day of hourly samples to daily statistics.
pub fn aggregate_daily(hourly: &[HourlySample]) -> Result<DailyWeather> {
    let Some(first) = hourly.first() else {
        return Err(Error::NoSamples);
    };
    let day = first.0.date_naive();
    if let Some(other) = hourly.iter().find(|s| s.0.date_naive() != day) {
        return Err(Error::invalid(format!(
            "samples span more than one UTC day ({day} and {})",
            other.0.date_naive()
        )));
    }
    let mut t_min = f64::INFINITY;
    let mut t_max = f64::NEG_INFINITY;
    let mut s_min = f64::INFINITY;
    let mut s_sum = 0.0;
    for &(_, t, s) in hourly {
        t_min = t_min.min(t);
        t_max = t_max.max(t);
        s_min = s_min.min(s);
        s_sum += s;
    }
    DailyWeather::new(t_min, t_max, s_sum / hourly.len() as f64, s_min)
}

/// Group hourly samples by UTC calendar day and aggregate each day.
pub fn aggregate_hourly(hourly: &[HourlySample]) -> Result<BTreeMap<NaiveDate, DailyWeather>> {
    let mut by_day: BTreeMap<NaiveDate, Vec<HourlySample>> = BTreeMap::new();
    for s in hourly {
        by_day.entry(s.0.date_naive()).or_default().push(*s);
    }
    by_day
        .into_iter()
        .map(|(d, samples)| aggregate_daily(&samples).map(|w| (d, w)))
        .collect()
}

/// Ratios of lead days 3..=10 to lead day 1 at one coarse point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendFactors([f64; ART_HORIZON - FIRST_TREND_DAY + 1]);

impl TrendFactors {
    /// Factor for lead day `day` in 3..=10.
    pub fn get(&self, day: usize) -> f64 {
        assert!(
            (FIRST_TREND_DAY..=ART_HORIZON).contains(&day),
            "trend factors exist for days 3..=10, not {day}"
        );
        self.0[day - FIRST_TREND_DAY]
    }

    pub fn days(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().enumerate().map(|(i, &a)| (i + FIRST_TREND_DAY, a))
    }
}

fn trend_at(coarse: &ForecastGrid, idx: usize, variable: Variable) -> Result<TrendFactors> {
    let day1 = coarse.value(idx, 1).get(variable);
    if !(day1 > 0.0) {
        return Err(Error::InvalidTemperature(day1));
    }
    let mut out = [0.0; ART_HORIZON - FIRST_TREND_DAY + 1];
    for (i, a) in out.iter_mut().enumerate() {
        *a = coarse.value(idx, i + FIRST_TREND_DAY).get(variable) / day1;
    }
    Ok(TrendFactors(out))
}

/// Trend factors of `variable` at the coarse point nearest to `point`.
pub fn trend_factors(
    coarse: &ForecastGrid,
    point: &GridPoint,
    variable: Variable,
) -> Result<TrendFactors> {
    if coarse.horizon() < ART_HORIZON {
        return Err(Error::InsufficientHorizon {
            needed: ART_HORIZON,
            got: coarse.horizon(),
        });
    }
    if !coarse.covers(point) {
        return Err(Error::OutsideGrid {
            lat: point.lat,
            lon: point.lon,
        });
    }
    trend_at(coarse, nearest_point(coarse, point), variable)
}

/// Blend a short fine-resolution forecast with coarse long-range trends into a
/// 10-day fine-resolution forecast.
///
/// Days 1 and 2 are the fine values verbatim. Day `j` in 3..=10 is the fine
/// day-1 value scaled by the trend factor of the nearest coarse point, per
/// variable. Blended days are not re-checked against the min <= max ordering
/// since each variable follows its own trend.
pub fn compose_art(fine: &ForecastGrid, coarse: &ForecastGrid) -> Result<ForecastGrid> {
    if fine.issue_date() != coarse.issue_date() {
        return Err(Error::IssueDateMismatch {
            fine: fine.issue_date(),
            coarse: coarse.issue_date(),
        });
    }
    if fine.horizon() < 2 {
        return Err(Error::InsufficientHorizon {
            needed: 2,
            got: fine.horizon(),
        });
    }
    if coarse.horizon() < ART_HORIZON {
        return Err(Error::InsufficientHorizon {
            needed: ART_HORIZON,
            got: coarse.horizon(),
        });
    }

    let mut cache: HashMap<usize, [TrendFactors; 4]> = HashMap::new();
    let mut values = Vec::with_capacity(fine.points().len() * ART_HORIZON);
    for (p, point) in fine.points().iter().enumerate() {
        if !coarse.covers(point) {
            return Err(Error::OutsideGrid {
                lat: point.lat,
                lon: point.lon,
            });
        }
        let c = nearest_point(coarse, point);
        let factors = match cache.get(&c) {
            Some(f) => *f,
            None => {
                let f = [
                    trend_at(coarse, c, Variable::T2mMin)?,
                    trend_at(coarse, c, Variable::T2mMax)?,
                    trend_at(coarse, c, Variable::St10Mean)?,
                    trend_at(coarse, c, Variable::St10Min)?,
                ];
                cache.insert(c, f);
                f
            }
        };
        let day1 = *fine.value(p, 1);
        values.push(day1);
        values.push(*fine.value(p, 2));
        for j in FIRST_TREND_DAY..=ART_HORIZON {
            let mut w = day1;
            for (v, f) in Variable::ALL.into_iter().zip(factors.iter()) {
                w.set(v, day1.get(v) * f.get(j));
            }
            values.push(w);
        }
    }
    ForecastGrid::new(
        fine.issue_date(),
        fine.points().to_vec(),
        ART_HORIZON,
        values,
        fine.resolution_m(),
    )
}

/// One day of station observations; soil readings are often unavailable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationDay {
    pub t2m_min: f64,
    pub t2m_max: f64,
    pub st10_mean: Option<f64>,
    pub st10_min: Option<f64>,
}

impl StationDay {
    pub fn get(&self, v: Variable) -> Option<f64> {
        match v {
            Variable::T2mMin => Some(self.t2m_min),
            Variable::T2mMax => Some(self.t2m_max),
            Variable::St10Mean => self.st10_mean,
            Variable::St10Min => self.st10_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub location: GridPoint,
    observations: BTreeMap<NaiveDate, StationDay>,
}

impl StationSeries {
    /// Dates must be strictly increasing.
    pub fn new(location: GridPoint, days: Vec<(NaiveDate, StationDay)>) -> Result<Self> {
        let mut observations = BTreeMap::new();
        let mut prev: Option<NaiveDate> = None;
        for (d, obs) in days {
            if prev.is_some_and(|p| d <= p) {
                return Err(Error::invalid(format!(
                    "station dates must be strictly increasing ({d} after {})",
                    prev.unwrap()
                )));
            }
            prev = Some(d);
            observations.insert(d, obs);
        }
        Ok(Self {
            location,
            observations,
        })
    }

    pub fn get(&self, date: &NaiveDate) -> Option<&StationDay> {
        self.observations.get(date)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verification {
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

/// MAE and RMSE over (forecast, observation) pairs.
pub fn error_metrics(pairs: &[(f64, f64)]) -> Result<Verification> {
    if pairs.is_empty() {
        return Err(Error::NoMatchingDates);
    }
    let n = pairs.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for &(f, o) in pairs {
        let e = f - o;
        abs += e.abs();
        sq += e * e;
    }
    Ok(Verification {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        n: pairs.len(),
    })
}

/// Compare lead-day `lead` forecasts at the point nearest the station against
/// its observations, one pair per forecast whose valid date was observed.
pub fn verify_forecast(
    forecasts: &[ForecastGrid],
    station: &StationSeries,
    lead: usize,
    variable: Variable,
) -> Result<Verification> {
    let mut pairs = Vec::new();
    for grid in forecasts {
        if lead == 0 || lead > grid.horizon() {
            continue;
        }
        let idx = nearest_point(grid, &station.location);
        if let Some(obs) = station.get(&grid.valid_date(lead)).and_then(|d| d.get(variable)) {
            pairs.push((grid.value(idx, lead).get(variable), obs));
        }
    }
    error_metrics(&pairs)
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
struct GridRow {
    lat: f64,
    lon: f64,
    issue_date: NaiveDate,
    lead_day: usize,
    t2m_min_c: f64,
    t2m_max_c: f64,
    st10_mean_c: f64,
    st10_min_c: f64,
}

/// Smallest spacing between distinct points, 0 for single-point grids.
fn infer_resolution(points: &[GridPoint]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d = a.distance_m(b);
            if d > 0.0 && d < best {
                best = d;
            }
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Read a grid CSV. Each distinct `issue_date` becomes its own grid, in date
/// order; points keep their order of first appearance. When `resolution_m`
/// is `None` it is taken as the smallest point spacing.
pub fn read_grid_csv<R: Read>(reader: R, resolution_m: Option<f64>) -> Result<Vec<ForecastGrid>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut per_issue: BTreeMap<NaiveDate, Vec<GridRow>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<GridRow>().enumerate() {
        let row = row.map_err(|e| Error::Input {
            path: format!("grid row {}", i + 2),
            message: e.to_string(),
        })?;
        per_issue.entry(row.issue_date).or_default().push(row);
    }
    if per_issue.is_empty() {
        return Err(Error::invalid("grid CSV has no rows"));
    }
    let mut grids = Vec::with_capacity(per_issue.len());
    for (issue, rows) in per_issue {
        let mut points: Vec<GridPoint> = Vec::new();
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let horizon = rows.iter().map(|r| r.lead_day).max().unwrap_or(0);
        let mut cells: HashMap<(usize, usize), DailyWeather> = HashMap::new();
        for r in &rows {
            if r.lead_day == 0 {
                return Err(Error::invalid("lead_day starts at 1"));
            }
            let key = (r.lat.to_bits(), r.lon.to_bits());
            let p = match index.get(&key) {
                Some(&p) => p,
                None => {
                    points.push(GridPoint::new(r.lat, r.lon)?);
                    index.insert(key, points.len() - 1);
                    points.len() - 1
                }
            };
            let w = DailyWeather::from_celsius(r.t2m_min_c, r.t2m_max_c, r.st10_mean_c, r.st10_min_c)
                .map_err(|e| Error::Input {
                    path: format!("grid ({}, {}) {} day {}", r.lat, r.lon, issue, r.lead_day),
                    message: e.to_string(),
                })?;
            if cells.insert((p, r.lead_day), w).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate grid row for ({}, {}) issue {issue} day {}",
                    r.lat, r.lon, r.lead_day
                )));
            }
        }
        let res = resolution_m.unwrap_or_else(|| infer_resolution(&points));
        let mut values = Vec::with_capacity(points.len() * horizon);
        for p in 0..points.len() {
            for lead in 1..=horizon {
                let w = cells.get(&(p, lead)).ok_or_else(|| {
                    Error::invalid(format!(
                        "missing grid value for ({}, {}) issue {issue} day {lead}",
                        points[p].lat, points[p].lon
                    ))
                })?;
                values.push(*w);
            }
        }
        grids.push(ForecastGrid::new(issue, points, horizon, values, res)?);
    }
    Ok(grids)
}

pub fn write_grid_csv<W: Write>(writer: W, grids: &[ForecastGrid]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for g in grids {
        for (p, pt) in g.points().iter().enumerate() {
            for lead in 1..=g.horizon() {
                let w = g.value(p, lead);
                wtr.serialize(GridRow {
                    lat: pt.lat,
                    lon: pt.lon,
                    issue_date: g.issue_date(),
                    lead_day: lead,
                    t2m_min_c: kelvin_to_celsius(w.t2m_min),
                    t2m_max_c: kelvin_to_celsius(w.t2m_max),
                    st10_mean_c: kelvin_to_celsius(w.st10_mean),
                    st10_min_c: kelvin_to_celsius(w.st10_min),
                })?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct StationRow {
    date: NaiveDate,
    t2m_min_c: f64,
    t2m_max_c: f64,
    #[serde(default)]
    st10_mean_c: Option<f64>,
    #[serde(default)]
    st10_min_c: Option<f64>,
}

/// Read a station CSV; the soil columns may be absent or blank.
pub fn read_station_csv<R: Read>(reader: R, location: GridPoint) -> Result<StationSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut days = Vec::new();
    for (i, row) in rdr.deserialize::<StationRow>().enumerate() {
        let r = row.map_err(|e| Error::Input {
            path: format!("station row {}", i + 2),
            message: e.to_string(),
        })?;
        days.push((
            r.date,
            StationDay {
                t2m_min: celsius_to_kelvin(r.t2m_min_c),
                t2m_max: celsius_to_kelvin(r.t2m_max_c),
                st10_mean: r.st10_mean_c.map(celsius_to_kelvin),
                st10_min: r.st10_min_c.map(celsius_to_kelvin),
            },
        ));
    }
    StationSeries::new(location, days)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn date(d: &str) -> NaiveDate {
        d.parse().unwrap()
    }

    fn uniform(t: f64) -> DailyWeather {
        DailyWeather::new(t, t, t, t).unwrap()
    }

    fn one_point_grid(series: &[f64]) -> ForecastGrid {
        ForecastGrid::from_fn(
            date("2021-04-15"),
            vec![GridPoint::new(40.0, 22.0).unwrap()],
            series.len(),
            0.0,
            |_, lead| uniform(series[lead - 1]),
        )
        .unwrap()
    }

    #[test]
    fn aggregate_min_max_mean() {
        let t0 = Utc.with_ymd_and_hms(2021, 4, 15, 0, 0, 0).unwrap();
        let h = chrono::Duration::hours(1);
        let w = aggregate_daily(&[(t0, 283.0, 290.0), (t0 + h, 293.0, 292.0), (t0 + h * 2, 288.0, 291.0)])
            .unwrap();
        assert_eq!(w.t2m_min, 283.0);
        assert_eq!(w.t2m_max, 293.0);
        assert_eq!(w.st10_mean, 291.0);
        assert_eq!(w.st10_min, 290.0);

        let w = aggregate_daily(&[(t0, 285.0, 289.0)]).unwrap();
        assert_eq!((w.t2m_min, w.t2m_max, w.st10_mean, w.st10_min), (285.0, 285.0, 289.0, 289.0));
    }

    #[test]
    fn aggregate_soil_mean_of_two() {
        let t0 = Utc.with_ymd_and_hms(2021, 4, 15, 3, 0, 0).unwrap();
        let w = aggregate_daily(&[(t0, 283.0, 290.0), (t0, 284.0, 292.0)]).unwrap();
        assert_eq!(w.st10_mean, 291.0);
        assert_eq!(w.st10_min, 290.0);
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate_daily(&[]), Err(Error::NoSamples)));
        let t0 = Utc.with_ymd_and_hms(2021, 4, 15, 23, 0, 0).unwrap();
        let t1 = Utc.with_ymd_and_hms(2021, 4, 16, 0, 0, 0).unwrap();
        assert!(aggregate_daily(&[(t0, 283.0, 290.0), (t1, 283.0, 290.0)]).is_err());
        let days = aggregate_hourly(&[(t0, 283.0, 290.0), (t1, 284.0, 291.0)]).unwrap();
        assert_eq!(days.len(), 2);
    }

    #[test]
    fn trend_factor_arithmetic() {
        let mut s = vec![290.0; 10];
        s[2] = 293.0;
        let g = one_point_grid(&s);
        let pt = g.points()[0];
        let a = trend_factors(&g, &pt, Variable::T2mMax).unwrap();
        assert!((a.get(3) - 1.010345).abs() < 1e-6);

        let g = one_point_grid(&[285.0; 10]);
        let a = trend_factors(&g, &pt, Variable::St10Min).unwrap();
        assert!(a.days().all(|(_, f)| f == 1.0));

        let mut s = vec![280.0; 10];
        s[9] = 270.0;
        let a = trend_factors(&one_point_grid(&s), &pt, Variable::T2mMin).unwrap();
        assert!((a.get(10) - 0.964286).abs() < 1e-6);
    }

    #[test]
    fn trend_factor_errors() {
        let g = one_point_grid(&[285.0; 9]);
        let pt = g.points()[0];
        assert!(matches!(
            trend_factors(&g, &pt, Variable::T2mMax),
            Err(Error::InsufficientHorizon { .. })
        ));
        let g = one_point_grid(&[285.0; 10]);
        let far = GridPoint::new(10.0, 10.0).unwrap();
        assert!(matches!(trend_factors(&g, &far, Variable::T2mMax), Err(Error::OutsideGrid { .. })));

        // day-1 values can only be non-positive if built around validation
        let mut bad = g.clone();
        bad.values[0].t2m_max = 0.0;
        assert!(matches!(
            trend_factors(&bad, &pt, Variable::T2mMax),
            Err(Error::InvalidTemperature(_))
        ));
    }

    #[test]
    fn compose_copies_and_scales() {
        let issue = date("2021-04-20");
        let coarse = ForecastGrid::from_fn(
            issue,
            vec![GridPoint::new(40.0, 22.0).unwrap()],
            15,
            25_000.0,
            |_, lead| {
                let t = if lead == 3 { 293.0 } else { 290.0 };
                DailyWeather::new(280.0, t, 290.0, 289.0).unwrap()
            },
        )
        .unwrap();
        let fine = ForecastGrid::from_fn(
            issue,
            vec![GridPoint::new(40.01, 22.01).unwrap(), GridPoint::new(39.99, 21.99).unwrap()],
            3,
            2_000.0,
            |p, lead| DailyWeather::new(281.0 + p as f64, 288.0 + lead as f64 - 1.0, 291.0, 290.0).unwrap(),
        )
        .unwrap();
        let art = compose_art(&fine, &coarse).unwrap();
        assert_eq!(art.horizon(), 10);
        assert_eq!(art.points(), fine.points());
        assert_eq!(art.resolution_m(), 2_000.0);
        for p in 0..2 {
            assert_eq!(art.value(p, 1), fine.value(p, 1));
            assert_eq!(art.value(p, 2), fine.value(p, 2));
        }
        assert!((art.value(0, 3).t2m_max - 290.979).abs() < 1e-3);
        assert_eq!(art.value(0, 4).t2m_max, 288.0);
    }

    #[test]
    fn compose_flat_trend_repeats_day_one() {
        let issue = date("2021-05-01");
        let pt = GridPoint::new(40.0, 22.0).unwrap();
        let coarse = ForecastGrid::from_fn(issue, vec![pt], 10, 25_000.0, |_, _| uniform(290.0)).unwrap();
        let fine = ForecastGrid::from_fn(issue, vec![pt], 2, 2_000.0, |_, lead| {
            uniform(290.0 + lead as f64)
        })
        .unwrap();
        let art = compose_art(&fine, &coarse).unwrap();
        for j in 3..=10 {
            assert_eq!(art.value(0, j), fine.value(0, 1));
        }
    }

    #[test]
    fn compose_rejects_mismatched_dates() {
        let pt = GridPoint::new(40.0, 22.0).unwrap();
        let coarse = ForecastGrid::from_fn(date("2021-05-01"), vec![pt], 10, 0.0, |_, _| uniform(290.0)).unwrap();
        let fine = ForecastGrid::from_fn(date("2021-05-02"), vec![pt], 2, 0.0, |_, _| uniform(290.0)).unwrap();
        assert!(matches!(compose_art(&fine, &coarse), Err(Error::IssueDateMismatch { .. })));
    }

    #[test]
    fn nearest_point_rules() {
        let single = one_point_grid(&[290.0]);
        assert_eq!(nearest_point(&single, &GridPoint::new(0.0, 0.0).unwrap()), 0);

        let pts = vec![
            GridPoint::new(0.0, -1.0).unwrap(),
            GridPoint::new(0.0, 1.0).unwrap(),
            GridPoint::new(5.0, 5.0).unwrap(),
        ];
        let g = ForecastGrid::from_fn(date("2021-04-15"), pts.clone(), 1, 0.0, |_, _| uniform(290.0)).unwrap();
        assert_eq!(nearest_point(&g, &pts[2]), 2);
        assert_eq!(pts[2].distance_m(&pts[2]), 0.0);
        assert_eq!(nearest_point(&g, &GridPoint::new(0.0, 0.0).unwrap()), 0);
    }

    #[test]
    fn verification_math() {
        let m = error_metrics(&[(274.0, 275.0), (275.0, 275.0), (276.0, 275.0)]).unwrap();
        assert_eq!(m.mae, 2.0 / 3.0);
        assert_eq!(m.rmse, (2.0f64 / 3.0).sqrt());
        assert_eq!(m.n, 3);
        let m = error_metrics(&[(280.0, 280.0), (281.5, 281.5)]).unwrap();
        assert_eq!((m.mae, m.rmse), (0.0, 0.0));
    }

    #[test]
    fn verify_pairs_by_valid_date() {
        let loc = GridPoint::new(40.0, 22.0).unwrap();
        let grids: Vec<ForecastGrid> = [274.0, 275.0, 276.0]
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                ForecastGrid::from_fn(
                    date("2021-04-15") + Days::new(i as u64),
                    vec![loc],
                    2,
                    0.0,
                    |_, lead| if lead == 2 { DailyWeather::new(t, t, t, t).unwrap() } else { uniform(290.0) },
                )
                .unwrap()
            })
            .collect();
        let obs = (0..5)
            .map(|i| {
                (
                    date("2021-04-15") + Days::new(i),
                    StationDay { t2m_min: 275.0, t2m_max: 275.0, st10_mean: None, st10_min: None },
                )
            })
            .collect();
        let station = StationSeries::new(loc, obs).unwrap();
        let m = verify_forecast(&grids, &station, 2, Variable::T2mMax).unwrap();
        assert_eq!(m.n, 3);
        assert_eq!(m.mae, 2.0 / 3.0);
        assert!(matches!(
            verify_forecast(&grids, &station, 2, Variable::St10Mean),
            Err(Error::NoMatchingDates)
        ));
    }

    #[test]
    fn station_dates_strictly_increasing() {
        let loc = GridPoint::new(40.0, 22.0).unwrap();
        let d = StationDay { t2m_min: 275.0, t2m_max: 280.0, st10_mean: None, st10_min: None };
        assert!(StationSeries::new(loc, vec![(date("2021-04-15"), d), (date("2021-04-15"), d)]).is_err());
    }

    #[test]
    fn daily_weather_invariants() {
        assert!(DailyWeather::new(290.0, 280.0, 290.0, 289.0).is_err());
        assert!(DailyWeather::new(280.0, 290.0, 289.0, 290.0).is_err());
        assert!(DailyWeather::new(100.0, 290.0, 290.0, 289.0).is_err());
        assert!(GridPoint::new(91.0, 0.0).is_err());
    }

    #[test]
    fn grid_csv_round_trip_and_station_without_soil() {
        let csv_text = "lat,lon,issue_date,lead_day,t2m_min_c,t2m_max_c,st10_mean_c,st10_min_c\n\
            40.0,22.0,2021-04-15,1,10,20,15,12\n\
            40.0,22.0,2021-04-15,2,11,21,16,13\n\
            40.02,22.0,2021-04-15,1,10,20,15,12\n\
            40.02,22.0,2021-04-15,2,11,21,16,13\n";
        let grids = read_grid_csv(csv_text.as_bytes(), None).unwrap();
        assert_eq!(grids.len(), 1);
        let g = &grids[0];
        assert_eq!(g.points().len(), 2);
        assert_eq!(g.horizon(), 2);
        assert_eq!(g.value(1, 2).t2m_max, 21.0 + 273.15);
        assert!((g.resolution_m() - 2_226.0).abs() < 5.0);

        let mut out = Vec::new();
        write_grid_csv(&mut out, &grids).unwrap();
        let again = read_grid_csv(out.as_slice(), Some(g.resolution_m())).unwrap();
        for p in 0..2 {
            for lead in 1..=2 {
                for v in Variable::ALL {
                    assert!((again[0].value(p, lead).get(v) - g.value(p, lead).get(v)).abs() < 1e-9);
                }
            }
        }

        let missing = "lat,lon,issue_date,lead_day,t2m_min_c,t2m_max_c,st10_mean_c,st10_min_c\n\
            40.0,22.0,2021-04-15,2,11,21,16,13\n";
        assert!(read_grid_csv(missing.as_bytes(), None).is_err());

        let st = "date,t2m_min_c,t2m_max_c\n2021-04-15,10,20\n2021-04-16,11,22\n";
        let s = read_station_csv(st.as_bytes(), GridPoint::new(40.0, 22.0).unwrap()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(&date("2021-04-15")).unwrap().st10_mean, None);
    }
}
