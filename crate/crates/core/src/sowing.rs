//! Cotton sowing rules and daily recommendation maps.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::weathergrid::{DailyWeather, ForecastGrid, GridPoint, Variable, ART_HORIZON};
use crate::{celsius_to_kelvin, Error, Result};

/// Highest recommendation level; the only level counted as treatment.
pub const TOP_LEVEL: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Min,
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    Mandatory,
    Optimum,
}

impl std::str::FromStr for Priority {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mandatory" => Ok(Priority::Mandatory),
            "optimum" => Ok(Priority::Optimum),
            _ => Err(Error::invalid(format!("unknown priority `{s}`"))),
        }
    }
}

/// One threshold rule: the daily `variable` must strictly exceed
/// `threshold_c` on each of the first `window_days` days from sowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub variable: Variable,
    pub threshold_c: f64,
    pub window_days: usize,
    pub priority: Priority,
}

impl Condition {
    /// The daily statistic the variable carries.
    pub fn statistic(&self) -> Statistic {
        match self.variable {
            Variable::T2mMin | Variable::St10Min => Statistic::Min,
            Variable::T2mMax => Statistic::Max,
            Variable::St10Mean => Statistic::Mean,
        }
    }

    fn passes(&self, window: &[DailyWeather]) -> bool {
        // Compare in kelvin, converted exactly as grid values are on ingest, so
        // a reading equal to the threshold in Celsius is never "above" it.
        let threshold_k = celsius_to_kelvin(self.threshold_c);
        window[..self.window_days]
            .iter()
            .all(|w| w.get(self.variable) > threshold_k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SowingRules {
    conditions: Vec<Condition>,
}

impl SowingRules {
    pub fn new(conditions: Vec<Condition>) -> Result<Self> {
        if !conditions.iter().any(|c| c.priority == Priority::Mandatory) {
            return Err(Error::invalid("sowing rules need at least one mandatory condition"));
        }
        for (i, c) in conditions.iter().enumerate() {
            if !matches!(c.window_days, 5 | 10) {
                return Err(Error::invalid(format!(
                    "condition {} window must be 5 or 10 days, got {}",
                    i + 1,
                    c.window_days
                )));
            }
            if !c.threshold_c.is_finite() {
                return Err(Error::invalid(format!("condition {} threshold is not finite", i + 1)));
            }
        }
        Ok(Self { conditions })
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    /// Apply `condition<N>.threshold_celsius`, `condition<N>.window_days` and
    /// `condition<N>.priority` overrides (N is 1-based) to these rules.
    pub fn with_overrides(&self, kv: &KeyValues) -> Result<Self> {
        let mut conditions = self.conditions.clone();
        for key in kv.keys() {
            let Some((head, field)) = key.split_once('.') else {
                return Err(Error::invalid(format!("unknown rules key `{key}`")));
            };
            let idx: usize = head
                .strip_prefix("condition")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n >= 1 && n <= conditions.len())
                .ok_or_else(|| Error::invalid(format!("unknown rules key `{key}`")))?;
            let c = &mut conditions[idx - 1];
            match field {
                "threshold_celsius" => c.threshold_c = kv.parsed(key)?.unwrap(),
                "window_days" => c.window_days = kv.parsed(key)?.unwrap(),
                "priority" => c.priority = kv.parsed(key)?.unwrap(),
                _ => return Err(Error::invalid(format!("unknown rules key `{key}`"))),
            }
        }
        Self::new(conditions)
    }
}

/// The five cotton sowing conditions, in table order.
pub fn default_rules() -> SowingRules {
    let c = |variable, threshold_c, window_days, priority| Condition {
        variable,
        threshold_c,
        window_days,
        priority,
    };
    SowingRules::new(vec![
        c(Variable::St10Mean, 18.0, 10, Priority::Optimum),
        c(Variable::T2mMax, 26.0, 5, Priority::Optimum),
        c(Variable::St10Mean, 15.56, 5, Priority::Mandatory),
        c(Variable::St10Min, 10.0, 5, Priority::Mandatory),
        c(Variable::T2mMin, 10.0, 5, Priority::Mandatory),
    ])
    .expect("default rules are valid")
}

/// Per-condition pass flags for a window starting on the sowing day.
pub fn evaluate(rules: &SowingRules, window: &[DailyWeather]) -> Result<Vec<bool>> {
    if window.len() < ART_HORIZON {
        return Err(Error::InsufficientHorizon {
            needed: ART_HORIZON,
            got: window.len(),
        });
    }
    Ok(rules.conditions().iter().map(|c| c.passes(window)).collect())
}

/// Recommendation level from condition flags.
///
/// 0 when any mandatory condition fails, 3 when every condition passes, and
/// otherwise 1 plus the number of passing optimum conditions, capped at 2.
pub fn level(rules: &SowingRules, flags: &[bool]) -> u8 {
    assert_eq!(flags.len(), rules.conditions().len(), "one flag per condition");
    let mut optimum_passed = 0u8;
    for (c, &ok) in rules.conditions().iter().zip(flags) {
        match (c.priority, ok) {
            (Priority::Mandatory, false) => return 0,
            (Priority::Optimum, true) => optimum_passed += 1,
            _ => {}
        }
    }
    if flags.iter().all(|&f| f) {
        TOP_LEVEL
    } else {
        (1 + optimum_passed).min(TOP_LEVEL - 1)
    }
}

/// Treatment indicator: 1 for the top level only.
pub fn binarize(level: u8) -> u8 {
    u8::from(level == TOP_LEVEL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub point: GridPoint,
    pub date: NaiveDate,
    pub level: u8,
    pub flags: Vec<bool>,
}

/// Recommendation for every point of a 10-day blended forecast issued on `date`.
pub fn daily_map(art: &ForecastGrid, rules: &SowingRules, date: NaiveDate) -> Result<Vec<Recommendation>> {
    if art.issue_date() != date {
        return Err(Error::invalid(format!(
            "forecast issued {} cannot produce a map for {date}",
            art.issue_date()
        )));
    }
    if art.horizon() < ART_HORIZON {
        return Err(Error::InsufficientHorizon {
            needed: ART_HORIZON,
            got: art.horizon(),
        });
    }
    art.points()
        .iter()
        .enumerate()
        .map(|(p, pt)| {
            let flags = evaluate(rules, art.series(p))?;
            Ok(Recommendation {
                point: *pt,
                date,
                level: level(rules, &flags),
                flags,
            })
        })
        .collect()
}

/// Write map rows `lat,lon,date,level,t1..tN`.
pub fn write_map_csv<W: Write>(writer: W, maps: &[Recommendation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let n = maps.first().map_or(5, |r| r.flags.len());
    let mut header = vec!["lat".to_string(), "lon".into(), "date".into(), "level".into()];
    header.extend((1..=n).map(|i| format!("t{i}")));
    wtr.write_record(&header)?;
    for r in maps {
        let mut rec = vec![r.point.lat.to_string(), r.point.lon.to_string(), r.date.to_string(), r.level.to_string()];
        rec.extend(r.flags.iter().map(|&f| u8::from(f).to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read map rows written by [`write_map_csv`].
pub fn read_map_csv<R: std::io::Read>(reader: R) -> Result<Vec<Recommendation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let flag_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('t') && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("map CSV lacks column `{name}`")))
    };
    let (lat, lon, date, lvl) = (col("lat")?, col("lon")?, col("date")?, col("level")?);
    let bad = |line: usize, what: &str| Error::Input {
        path: format!("map row {line}"),
        message: format!("bad {what}"),
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let point = GridPoint::new(
            rec[lat].parse().map_err(|_| bad(line, "lat"))?,
            rec[lon].parse().map_err(|_| bad(line, "lon"))?,
        )?;
        let level: u8 = rec[lvl].parse().map_err(|_| bad(line, "level"))?;
        if level > TOP_LEVEL {
            return Err(bad(line, "level"));
        }
        out.push(Recommendation {
            point,
            date: rec[date].parse().map_err(|_| bad(line, "date"))?,
            level,
            flags: flag_cols.iter().map(|&c| &rec[c] == "1").collect(),
        });
    }
    Ok(out)
}

/// Plain-text graymap (P2) of one day's levels: rows run north to south,
/// columns west to east, level `l` maps to gray `85 * l`. Lattice cells with
/// no point are black.
pub fn write_map_pgm<W: Write>(mut writer: W, maps: &[Recommendation]) -> Result<()> {
    let mut lat_vals: Vec<f64> = maps.iter().map(|r| r.point.lat).collect();
    let mut lon_vals: Vec<f64> = maps.iter().map(|r| r.point.lon).collect();
    lat_vals.sort_by(|a, b| b.total_cmp(a));
    lat_vals.dedup();
    lon_vals.sort_by(f64::total_cmp);
    lon_vals.dedup();

    let (h, w) = (lat_vals.len(), lon_vals.len());
    let mut pixels = vec![0u8; h * w];
    for r in maps {
        let row = lat_vals.iter().position(|&v| v == r.point.lat).unwrap();
        let col = lon_vals.iter().position(|&v| v == r.point.lon).unwrap();
        pixels[row * w + col] = r.level * 85;
    }
    writeln!(writer, "P2")?;
    writeln!(writer, "{w} {h}")?;
    writeln!(writer, "255")?;
    for row in pixels.chunks(w.max(1)) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        writeln!(writer, "{}", line.join(" "))?;
    }
    Ok(())
}
