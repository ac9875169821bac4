//! Field records, covariate engineering and the estimation matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::sowing::{binarize, Recommendation};
use crate::weathergrid::{bbox_contains, nearest_index, GridPoint};
use crate::{Error, Result};

/// Graph nodes with data columns, and the columns each expands to. Seed
/// variety (`SV`) expands to one indicator column per variety present.
pub const COVARIATE_NODES: [(&str, &[&str]); 6] = [
    ("WS", &["ws_min", "ws_max"]),
    ("SoC", &["soc"]),
    ("SM", &["sm"]),
    ("G", &["g"]),
    ("SP", &["silt", "clay", "sand"]),
    ("SV", &[]),
];
const ONE_HOT_NODE: &str = "SV";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub field_id: String,
    pub sowing_date: NaiveDate,
    pub harvest_date: NaiveDate,
    pub yield_kg_ha: f64,
    pub seed_variety: String,
    pub perimeter_m: f64,
    pub area_m2: f64,
    pub clay_pct: f64,
    pub silt_pct: f64,
    pub sand_pct: f64,
    pub soc_g_kg: Option<f64>,
    pub ws_min_c: Option<f64>,
    pub ws_max_c: Option<f64>,
    pub ndwi_sowing: Option<f64>,
    /// Field centroid, needed to look up recommendation maps.
    pub location: Option<GridPoint>,
    /// Treatment label when known in advance (synthetic data).
    pub treatment: Option<u8>,
}

impl FieldRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(Error::Input {
                path: format!("field {}", self.field_id),
                message: msg,
            })
        };
        if self.sowing_date >= self.harvest_date {
            return fail(format!(
                "sowing date {} is not before harvest date {}",
                self.sowing_date, self.harvest_date
            ));
        }
        if !(self.yield_kg_ha > 0.0) {
            return fail(format!("yield must be positive, got {}", self.yield_kg_ha));
        }
        if !(self.area_m2 > 0.0) || !(self.perimeter_m > 0.0) {
            return fail("perimeter and area must be positive".into());
        }
        let texture = self.clay_pct + self.silt_pct + self.sand_pct;
        if !(95.0..=105.0).contains(&texture) {
            return fail(format!("clay + silt + sand = {texture}, expected about 100"));
        }
        if let Some(v) = self.ndwi_sowing {
            if !(-1.0..=1.0).contains(&v) {
                return fail(format!("NDWI {v} outside [-1, 1]"));
            }
        }
        if let Some(t) = self.treatment {
            if t > 1 {
                return fail(format!("treatment must be 0 or 1, got {t}"));
            }
        }
        Ok(())
    }

    /// Perimeter-to-area ratio, 1/m.
    pub fn geometry_ratio(&self) -> f64 {
        self.perimeter_m / self.area_m2
    }

    fn column_value(&self, column: &str) -> Option<f64> {
        match column {
            "ws_min" => self.ws_min_c,
            "ws_max" => self.ws_max_c,
            "soc" => self.soc_g_kg,
            "sm" => self.ndwi_sowing,
            "g" => Some(self.geometry_ratio()),
            "silt" => Some(self.silt_pct),
            "clay" => Some(self.clay_pct),
            "sand" => Some(self.sand_pct),
            _ => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct FieldRow {
    field_id: String,
    sowing_date: NaiveDate,
    harvest_date: NaiveDate,
    yield_kg_ha: f64,
    seed_variety: String,
    perimeter_m: f64,
    area_m2: f64,
    clay_pct: f64,
    silt_pct: f64,
    sand_pct: f64,
    soc_g_kg: Option<f64>,
    ws_min_c: Option<f64>,
    ws_max_c: Option<f64>,
    ndwi_sowing: Option<f64>,
    #[serde(default)]
    lat: Option<f64>,
    #[serde(default)]
    lon: Option<f64>,
    #[serde(default)]
    treatment: Option<u8>,
}

const FIELD_COLUMNS: [&str; 14] = [
    "field_id",
    "sowing_date",
    "harvest_date",
    "yield_kg_ha",
    "seed_variety",
    "perimeter_m",
    "area_m2",
    "clay_pct",
    "silt_pct",
    "sand_pct",
    "soc_g_kg",
    "ws_min_c",
    "ws_max_c",
    "ndwi_sowing",
];

/// Read a fields CSV. Blank covariate cells become `None`; optional trailing
/// `lat,lon` and `treatment` columns are honored when present.
pub fn read_fields_csv<R: Read>(reader: R) -> Result<Vec<FieldRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, row) in rdr.deserialize::<FieldRow>().enumerate() {
        let r = row.map_err(|e| Error::Input {
            path: format!("fields row {}", i + 2),
            message: e.to_string(),
        })?;
        let location = match (r.lat, r.lon) {
            (Some(lat), Some(lon)) => Some(GridPoint::new(lat, lon)?),
            (None, None) => None,
            _ => {
                return Err(Error::Input {
                    path: format!("field {}", r.field_id),
                    message: "lat and lon must be given together".into(),
                })
            }
        };
        let rec = FieldRecord {
            field_id: r.field_id,
            sowing_date: r.sowing_date,
            harvest_date: r.harvest_date,
            yield_kg_ha: r.yield_kg_ha,
            seed_variety: r.seed_variety,
            perimeter_m: r.perimeter_m,
            area_m2: r.area_m2,
            clay_pct: r.clay_pct,
            silt_pct: r.silt_pct,
            sand_pct: r.sand_pct,
            soc_g_kg: r.soc_g_kg,
            ws_min_c: r.ws_min_c,
            ws_max_c: r.ws_max_c,
            ndwi_sowing: r.ndwi_sowing,
            location,
            treatment: r.treatment,
        };
        rec.validate()?;
        if !ids.insert(rec.field_id.clone()) {
            return Err(Error::invalid(format!("duplicate field_id `{}`", rec.field_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_fields_csv<W: Write>(writer: W, fields: &[FieldRecord]) -> Result<()> {
    let with_location = fields.iter().any(|f| f.location.is_some());
    let with_treatment = fields.iter().any(|f| f.treatment.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIELD_COLUMNS.to_vec();
    if with_location {
        header.extend(["lat", "lon"]);
    }
    if with_treatment {
        header.push("treatment");
    }
    wtr.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for f in fields {
        let mut rec = vec![
            f.field_id.clone(),
            f.sowing_date.to_string(),
            f.harvest_date.to_string(),
            f.yield_kg_ha.to_string(),
            f.seed_variety.clone(),
            f.perimeter_m.to_string(),
            f.area_m2.to_string(),
            f.clay_pct.to_string(),
            f.silt_pct.to_string(),
            f.sand_pct.to_string(),
            opt(f.soc_g_kg),
            opt(f.ws_min_c),
            opt(f.ws_max_c),
            opt(f.ndwi_sowing),
        ];
        if with_location {
            rec.push(opt(f.location.map(|p| p.lat)));
            rec.push(opt(f.location.map(|p| p.lon)));
        }
        if with_treatment {
            rec.push(f.treatment.map_or(String::new(), |t| t.to_string()));
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct NdviRow {
    field_id: String,
    date: NaiveDate,
    ndvi: f64,
}

/// Read NDVI observations grouped per field, sorted by date.
pub fn read_ndvi_csv<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<(NaiveDate, f64)>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<NdviRow>().enumerate() {
        let r = row.map_err(|e| Error::Input {
            path: format!("ndvi row {}", i + 2),
            message: e.to_string(),
        })?;
        out.entry(r.field_id).or_default().push((r.date, r.ndvi));
    }
    for series in out.values_mut() {
        series.sort_by_key(|(d, _)| *d);
    }
    Ok(out)
}

/// Trapezoidal area under an index series, in index-days.
pub fn trapezoid_index(series: &[(NaiveDate, f64)]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::invalid("trapezoidal index needs at least two observations"));
    }
    let mut area = 0.0;
    for w in series.windows(2) {
        let days = (w[1].0 - w[0].0).num_days();
        if days <= 0 {
            return Err(Error::invalid(format!(
                "index dates must be strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
        area += (w[0].1 + w[1].1) / 2.0 * days as f64;
    }
    Ok(area)
}

/// Crop-growth proxy: trapezoidal NDVI between sowing and harvest inclusive.
pub fn crop_growth_index(series: &[(NaiveDate, f64)], field: &FieldRecord) -> Result<f64> {
    let window: Vec<(NaiveDate, f64)> = series
        .iter()
        .copied()
        .filter(|(d, _)| *d >= field.sowing_date && *d <= field.harvest_date)
        .collect();
    trapezoid_index(&window)
}

/// Attach treatment labels from recommendation maps: a field is treated when
/// the grid point nearest to it had the top level on its sowing date.
pub fn label_treatment(
    fields: &[FieldRecord],
    maps: &BTreeMap<NaiveDate, Vec<Recommendation>>,
) -> Result<Vec<(FieldRecord, u8)>> {
    let missing: Vec<String> = fields
        .iter()
        .filter(|f| maps.get(&f.sowing_date).is_none_or(|m| m.is_empty()))
        .map(|f| f.field_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingMap(missing));
    }
    fields
        .iter()
        .map(|f| {
            let loc = f.location.ok_or_else(|| Error::Input {
                path: format!("field {}", f.field_id),
                message: "field has no location; cannot look up its recommendation".into(),
            })?;
            let map = &maps[&f.sowing_date];
            let points: Vec<GridPoint> = map.iter().map(|r| r.point).collect();
            if !bbox_contains(&points, &loc, grid_spacing(&points) / 2.0) {
                return Err(Error::OutsideGrid {
                    lat: loc.lat,
                    lon: loc.lon,
                });
            }
            let i = nearest_index(&points, &loc).expect("non-empty map");
            Ok((f.clone(), binarize(map[i].level)))
        })
        .collect()
}

// nearest-neighbour spacing from the first point; enough for a lattice
fn grid_spacing(points: &[GridPoint]) -> f64 {
    let d = points
        .iter()
        .skip(1)
        .map(|p| p.distance_m(&points[0]))
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if d.is_finite() {
        d
    } else {
        0.0
    }
}

/// Pair records with the treatment column they already carry.
pub fn labeled_from_records(fields: &[FieldRecord]) -> Result<Vec<(FieldRecord, u8)>> {
    fields
        .iter()
        .map(|f| {
            f.treatment.map(|t| (f.clone(), t)).ok_or_else(|| Error::Input {
                path: format!("field {}", f.field_id),
                message: "no treatment label".into(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    /// z-scored with the stored population mean and standard deviation
    Scaled { mean: f64, std: f64 },
    /// 0/1 indicator belonging to a categorical group
    OneHot { group: String },
    /// used as given
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Rows of (treatment, outcome, covariates) ready for estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDataset {
    ids: Vec<String>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    // row-major, n_rows x columns.len()
    x: Vec<f64>,
    columns: Vec<Column>,
    propensity: Option<Vec<f64>>,
}

impl EvalDataset {
    /// Dataset with raw (unscaled) covariate columns.
    pub fn new(treatment: Vec<u8>, outcome: Vec<f64>, rows: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        let n = treatment.len();
        if outcome.len() != n || rows.len() != n {
            return Err(Error::invalid("treatment, outcome and covariate rows differ in length"));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != names.len()) {
            return Err(Error::invalid(format!(
                "covariate row has {} values for {} columns",
                r.len(),
                names.len()
            )));
        }
        let columns = names
            .into_iter()
            .map(|name| Column { name, kind: ColumnKind::Raw })
            .collect();
        Self::from_parts(
            (0..n).map(|i| i.to_string()).collect(),
            treatment,
            outcome,
            rows.into_iter().flatten().collect(),
            columns,
        )
    }

    pub fn from_parts(
        ids: Vec<String>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        x: Vec<f64>,
        columns: Vec<Column>,
    ) -> Result<Self> {
        let n = treatment.len();
        if ids.len() != n || outcome.len() != n || x.len() != n * columns.len() {
            return Err(Error::invalid("dataset parts have inconsistent sizes"));
        }
        if treatment.iter().any(|&t| t > 1) {
            return Err(Error::invalid("treatment must be 0 or 1"));
        }
        if outcome.iter().chain(&x).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self {
            ids,
            treatment,
            outcome,
            x,
            columns,
            propensity: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.treatment.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn covariate_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.columns.len();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row(i)[j]).collect()
    }

    /// Row-major covariate matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.x
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.n_rows() - self.n_treated()
    }

    pub fn group_indices(&self, arm: u8) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.treatment[i] == arm).collect()
    }

    /// Propensity scores carried alongside the rows, if attached.
    pub fn propensity(&self) -> Option<&[f64]> {
        self.propensity.as_deref()
    }

    pub fn with_propensity(mut self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.n_rows() {
            return Err(Error::invalid("one propensity score per row required"));
        }
        self.propensity = Some(scores);
        Ok(self)
    }

    pub fn without_propensity(&self) -> Self {
        Self {
            propensity: None,
            ..self.clone()
        }
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let p = self.columns.len();
        let mut x = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            treatment: indices.iter().map(|&i| self.treatment[i]).collect(),
            outcome: indices.iter().map(|&i| self.outcome[i]).collect(),
            x,
            columns: self.columns.clone(),
            propensity: self
                .propensity
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    /// Replace the treatment column. Attached propensity scores no longer
    /// describe it and are dropped.
    pub fn with_treatment(&self, treatment: Vec<u8>) -> Result<Self> {
        if treatment.len() != self.n_rows() || treatment.iter().any(|&t| t > 1) {
            return Err(Error::invalid("replacement treatment must be 0/1 per row"));
        }
        Ok(Self {
            treatment,
            propensity: None,
            ..self.clone()
        })
    }

    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.n_rows() || outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("replacement outcome must be finite, one per row"));
        }
        Ok(Self {
            outcome,
            ..self.clone()
        })
    }

    /// Append a raw covariate column. Attached propensity scores are dropped
    /// since they were fit without it.
    pub fn with_column(&self, name: &str, values: &[f64]) -> Result<Self> {
        if values.len() != self.n_rows() {
            return Err(Error::invalid("new column needs one value per row"));
        }
        let p = self.columns.len();
        let mut x = Vec::with_capacity(self.n_rows() * (p + 1));
        for (i, &v) in values.iter().enumerate() {
            x.extend_from_slice(self.row(i));
            x.push(v);
        }
        let mut columns = self.columns.clone();
        columns.push(Column {
            name: name.to_string(),
            kind: ColumnKind::Raw,
        });
        Ok(Self {
            x,
            columns,
            propensity: None,
            ..self.clone()
        })
    }

    /// Keep only the columns at `keep` (ascending indices).
    pub fn select_columns(&self, keep: &[usize]) -> Self {
        let mut x = Vec::with_capacity(self.n_rows() * keep.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            x.extend(keep.iter().map(|&j| row[j]));
        }
        Self {
            x,
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            ..self.clone()
        }
    }

    /// Drop columns that are constant over the current rows.
    pub fn prune_constant_columns(&self) -> (Self, Vec<String>) {
        let mut keep = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..self.n_cols() {
            let first = self.row(0)[j];
            if (1..self.n_rows()).any(|i| self.row(i)[j] != first) {
                keep.push(j);
            } else {
                dropped.push(self.columns[j].name.clone());
            }
        }
        if dropped.is_empty() {
            (self.clone(), dropped)
        } else {
            (self.select_columns(&keep), dropped)
        }
    }
}

/// Result of [`assemble`], with the bookkeeping a report needs.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub dataset: EvalDataset,
    pub rows_in: usize,
    /// Rows dropped because a needed covariate was missing.
    pub dropped_missing: usize,
    /// Covariate columns before zero-variance pruning.
    pub candidate_columns: usize,
    pub dropped_zero_variance: Vec<String>,
}

/// Natural ordering key so `SV2` sorts before `SV10`.
fn natural_key(s: &str) -> (String, u64, String) {
    let digits = s.chars().rev().take_while(|c| c.is_ascii_digit()).count();
    let (head, tail) = s.split_at(s.len() - digits);
    (head.to_string(), tail.parse().unwrap_or(0), s.to_string())
}

/// Build the estimation matrix for the adjustment nodes.
///
/// Continuous columns are z-scored with the population standard deviation;
/// seed-variety indicators are left as 0/1. Rows missing any needed value
/// are dropped, as are columns with zero variance.
pub fn assemble<S: AsRef<str>>(rows: &[(FieldRecord, u8)], adjustment: &[S]) -> Result<Assembly> {
    let wanted: BTreeSet<&str> = adjustment.iter().map(AsRef::as_ref).collect();
    for node in &wanted {
        if !COVARIATE_NODES.iter().any(|(n, _)| n == node) {
            return Err(Error::invalid(format!("no covariate data for node `{node}`")));
        }
    }
    let continuous: Vec<&str> = COVARIATE_NODES
        .iter()
        .filter(|(n, _)| wanted.contains(n))
        .flat_map(|(_, cols)| cols.iter().copied())
        .collect();
    let one_hot = wanted.contains(ONE_HOT_NODE);

    let kept: Vec<&(FieldRecord, u8)> = rows
        .iter()
        .filter(|(f, _)| continuous.iter().all(|c| f.column_value(c).is_some()))
        .collect();
    let dropped_missing = rows.len() - kept.len();
    if dropped_missing > 0 {
        log::warn!("dropped {dropped_missing} row(s) with missing covariates");
    }
    if kept.len() < 2 {
        return Err(Error::invalid(format!(
            "{} row(s) left after removing missing values; need at least 2",
            kept.len()
        )));
    }

    let mut varieties: Vec<&str> = if one_hot {
        kept.iter()
            .map(|(f, _)| f.seed_variety.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        Vec::new()
    };
    varieties.sort_by_key(|v| natural_key(v));

    let n = kept.len();
    let mut columns: Vec<Column> = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    let mut dropped_zero_variance = Vec::new();
    for c in &continuous {
        let vals: Vec<f64> = kept.iter().map(|(f, _)| f.column_value(c).unwrap()).collect();
        let mean = crate::stats::mean(&vals);
        let std = crate::stats::pop_std(&vals);
        if !(std > 1e-12 * (1.0 + mean.abs())) {
            log::warn!("dropping zero-variance covariate `{c}`");
            dropped_zero_variance.push(c.to_string());
            continue;
        }
        columns.push(Column {
            name: c.to_string(),
            kind: ColumnKind::Scaled { mean, std },
        });
        data.push(vals.iter().map(|v| (v - mean) / std).collect());
    }
    for v in &varieties {
        let name = format!("sv_{v}");
        if varieties.len() < 2 {
            log::warn!("dropping zero-variance covariate `{name}`");
            dropped_zero_variance.push(name);
            continue;
        }
        columns.push(Column {
            name,
            kind: ColumnKind::OneHot {
                group: ONE_HOT_NODE.to_string(),
            },
        });
        data.push(
            kept.iter()
                .map(|(f, _)| f64::from(u8::from(f.seed_variety == *v)))
                .collect(),
        );
    }

    let p = columns.len();
    let mut x = Vec::with_capacity(n * p);
    for i in 0..n {
        x.extend(data.iter().map(|col| col[i]));
    }
    let dataset = EvalDataset::from_parts(
        kept.iter().map(|(f, _)| f.field_id.clone()).collect(),
        kept.iter().map(|(_, t)| *t).collect(),
        kept.iter().map(|(f, _)| f.yield_kg_ha).collect(),
        x,
        columns,
    )?;
    Ok(Assembly {
        dataset,
        rows_in: rows.len(),
        dropped_missing,
        candidate_columns: continuous.len() + varieties.len(),
        dropped_zero_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FARM_ADJUSTMENT_SET;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    pub(crate) fn record(id: usize, variety: &str) -> FieldRecord {
        let x = id as f64;
        FieldRecord {
            field_id: format!("f{id}"),
            sowing_date: d("2021-04-20"),
            harvest_date: d("2021-10-01"),
            yield_kg_ha: 3000.0 + 10.0 * x,
            seed_variety: variety.to_string(),
            perimeter_m: 400.0 + x,
            area_m2: 10_000.0 + 50.0 * x,
            clay_pct: 30.0 + (x % 3.0),
            silt_pct: 30.0,
            sand_pct: 40.0 - (x % 3.0),
            soc_g_kg: Some(10.0 + (x % 5.0)),
            ws_min_c: Some(10.0 + (x % 4.0)),
            ws_max_c: Some(22.0 + (x % 6.0)),
            ndwi_sowing: Some(0.1 + 0.01 * (x % 7.0)),
            location: None,
            treatment: None,
        }
    }

    #[test]
    fn trapezoid_examples() {
        let d0 = d("2021-05-01");
        let day = |n: u64| d0 + chrono::Days::new(n);
        assert_eq!(trapezoid_index(&[(d0, 0.2), (day(10), 0.4)]).unwrap(), 3.0000000000000004);
        assert!((trapezoid_index(&[(d0, 0.2), (day(10), 0.4)]).unwrap() - 3.0).abs() < 1e-12);
        assert!((trapezoid_index(&[(d0, 0.5), (day(20), 0.5)]).unwrap() - 10.0).abs() < 1e-12);
        assert!((trapezoid_index(&[(d0, 0.1), (day(5), 0.3), (day(15), 0.3)]).unwrap() - 4.0).abs() < 1e-12);
        assert!(trapezoid_index(&[(d0, 0.1)]).is_err());
        assert!(trapezoid_index(&[(d0, 0.1), (d0, 0.2)]).is_err());
    }

    #[test]
    fn crop_growth_uses_season_window() {
        let f = record(1, "SV1");
        let series = vec![
            (d("2021-04-01"), 0.9),
            (d("2021-04-20"), 0.2),
            (d("2021-04-30"), 0.4),
            (d("2021-11-01"), 0.9),
        ];
        assert!((crop_growth_index(&series, &f).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn z_scores_use_population_std() {
        let rows: Vec<(FieldRecord, u8)> = (0..3)
            .map(|i| {
                let mut r = record(i, "SV1");
                r.soc_g_kg = Some(1.0 + i as f64);
                (r, (i % 2) as u8)
            })
            .collect();
        let a = assemble(&rows, &["SoC"]).unwrap();
        let col = a.dataset.column(0);
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (c, e) in col.iter().zip(expect) {
            assert!((c - e).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_varieties() {
        let rows: Vec<(FieldRecord, u8)> = (0..26)
            .map(|i| (record(i, &format!("SV{}", i % 13 + 1)), (i % 2) as u8))
            .collect();
        let a = assemble(&rows, &["SV"]).unwrap();
        assert_eq!(a.dataset.n_cols(), 13);
        assert_eq!(a.dataset.covariate_names()[..3], ["sv_SV1", "sv_SV2", "sv_SV3"]);
        assert_eq!(a.dataset.covariate_names()[12], "sv_SV13");
        for i in 0..a.dataset.n_rows() {
            assert_eq!(a.dataset.row(i).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn farm_set_column_count_excludes_constants() {
        let rows: Vec<(FieldRecord, u8)> = (0..40)
            .map(|i| (record(i, &format!("SV{}", i % 13 + 1)), (i % 2) as u8))
            .collect();
        let estimable: Vec<&str> = FARM_ADJUSTMENT_SET
            .iter()
            .copied()
            .filter(|n| !["AbS", "AdS"].contains(n))
            .collect();
        let a = assemble(&rows, &estimable).unwrap();
        // ws_min, ws_max, soc, sm, g + silt, clay, sand + 13 varieties
        assert_eq!(a.candidate_columns, 5 + 3 + 13);
        // silt is constant in the fixture
        assert_eq!(a.dropped_zero_variance, vec!["silt".to_string()]);
        assert_eq!(a.dataset.n_cols(), 20);
        assert!(assemble(&rows, &["AbS"]).is_err());
    }

    #[test]
    fn missing_values_drop_rows() {
        let mut rows: Vec<(FieldRecord, u8)> = (0..6).map(|i| (record(i, "SV1"), (i % 2) as u8)).collect();
        rows[2].0.ndwi_sowing = None;
        let a = assemble(&rows, &["SM"]).unwrap();
        assert_eq!(a.dropped_missing, 1);
        assert_eq!(a.dataset.n_rows(), 5);
        assert_eq!(a.dataset.n_treated() + a.dataset.n_control(), 5);
        // not needed for SoC, so kept
        assert_eq!(assemble(&rows, &["SoC"]).unwrap().dropped_missing, 0);

        let few: Vec<(FieldRecord, u8)> = rows[..2].to_vec();
        let mut few = few;
        few[0].0.ndwi_sowing = None;
        assert!(assemble(&few, &["SM"]).is_err());
    }

    #[test]
    fn geometry_ratio_is_positive() {
        let r = record(3, "SV1");
        assert_eq!(r.geometry_ratio(), 403.0 / 10_150.0);
        assert!(r.geometry_ratio() > 0.0);
    }

    #[test]
    fn labels_from_maps() {
        let day = d("2021-04-20");
        let rec = |lat: f64, lon: f64, level: u8| Recommendation {
            point: GridPoint::new(lat, lon).unwrap(),
            date: day,
            level,
            flags: vec![level == 3; 5],
        };
        let mut maps = BTreeMap::new();
        maps.insert(day, vec![rec(40.0, 22.0, 3), rec(40.0, 22.02, 0), rec(40.02, 22.0, 2), rec(40.02, 22.02, 2)]);

        let mut a = record(1, "SV1");
        a.location = Some(GridPoint::new(40.001, 22.001).unwrap());
        let mut b = record(2, "SV1");
        b.location = Some(GridPoint::new(40.001, 22.019).unwrap());
        let mut c = record(3, "SV1");
        c.location = Some(GridPoint::new(40.019, 22.001).unwrap());
        let labeled = label_treatment(&[a.clone(), b, c], &maps).unwrap();
        let t: Vec<u8> = labeled.iter().map(|(_, t)| *t).collect();
        assert_eq!(t, vec![1, 0, 0]);

        let mut late = record(4, "SV1");
        late.sowing_date = d("2021-04-21");
        late.location = a.location;
        match label_treatment(&[a.clone(), late], &maps) {
            Err(Error::MissingMap(ids)) => assert_eq!(ids, vec!["f4".to_string()]),
            other => panic!("{other:?}"),
        }

        let mut far = a;
        far.location = Some(GridPoint::new(41.0, 22.0).unwrap());
        assert!(matches!(label_treatment(&[far], &maps), Err(Error::OutsideGrid { .. })));
    }

    #[test]
    fn fields_csv_round_trip() {
        let mut recs: Vec<FieldRecord> = (0..3).map(|i| record(i, "SV2")).collect();
        recs[1].ndwi_sowing = None;
        recs[2].treatment = Some(1);
        recs[0].treatment = Some(0);
        recs[1].treatment = Some(0);
        let mut buf = Vec::new();
        write_fields_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "field_id,sowing_date,harvest_date,yield_kg_ha,seed_variety,perimeter_m,area_m2,clay_pct,silt_pct,sand_pct,soc_g_kg,ws_min_c,ws_max_c,ndwi_sowing,treatment\n"
        ));
        assert_eq!(read_fields_csv(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn field_validation() {
        let mut r = record(1, "SV1");
        r.harvest_date = r.sowing_date;
        assert!(r.validate().is_err());
        let mut r = record(1, "SV1");
        r.clay_pct = 80.0;
        assert!(r.validate().is_err());
        let mut r = record(1, "SV1");
        r.yield_kg_ha = 0.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn dataset_transforms() {
        let ds = EvalDataset::new(
            vec![0, 1, 1],
            vec![1.0, 2.0, 3.0],
            vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
        .with_propensity(vec![0.3, 0.5, 0.7])
        .unwrap();
        let sub = ds.subset(&[2, 2, 0]);
        assert_eq!(sub.treatment(), &[1, 1, 0]);
        assert_eq!(sub.propensity().unwrap(), &[0.7, 0.7, 0.3]);
        let (pruned, dropped) = ds.prune_constant_columns();
        assert_eq!(dropped, vec!["b".to_string()]);
        assert_eq!(pruned.n_cols(), 1);
        let wider = ds.with_column("r", &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(wider.row(1), &[2.0, 5.0, 0.2]);
        assert!(wider.propensity().is_none());
        assert!(ds.with_treatment(vec![1, 0, 0]).unwrap().propensity().is_none());
    }
}
