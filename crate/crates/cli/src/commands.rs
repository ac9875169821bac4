use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Serialize;
use sowcause::dataset::{
    assemble, crop_growth_index, label_treatment, labeled_from_records, read_fields_csv, read_ndvi_csv,
    write_fields_csv, EvalDataset, FieldRecord,
};
use sowcause::estimators::{estimate, fit_propensity, refit_estimator, trim, EstimateOptions};
use sowcause::graph::{CausalDag, FARM_ADJUSTMENT_SET, FARM_GRAPH};
use sowcause::refutation::{
    refute_placebo, refute_random_common_cause, refute_subset_removal, refute_unobserved_common_cause,
    RefutationTest,
};
use sowcause::scm::{generate, oracle_ate, ScmConfig};
use sowcause::sowing::{daily_map, default_rules, read_map_csv, write_map_csv, write_map_pgm, Recommendation, SowingRules};
use sowcause::stats::mean;
use sowcause::weathergrid::{
    compose_art, read_grid_csv, read_station_csv, verify_forecast, write_grid_csv, ForecastGrid, Variable,
};
use sowcause::config::KeyValues;
use sowcause::{Error, Result};

use crate::report::{CropGrowthSummary, DatasetSummary, PropensitySummary, RunReport, VerificationEntry, SCHEMA_VERSION};
use crate::settings::PipelineConfig;

const ORACLE_DRAWS: usize = 100_000;

fn input_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Read and parse an input file; every failure counts as bad input.
fn read_input<T>(path: &Path, parse: impl FnOnce(BufReader<File>) -> Result<T>) -> Result<T> {
    let file = File::open(path).map_err(|e| input_error(path, e))?;
    parse(BufReader::new(file)).map_err(|e| match e {
        Error::Input { .. } => e,
        other => input_error(path, other),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::invalid(format!("`{key}` is required for this command")))
}

// ---------------------------------------------------------------------------
// blend / recommend
// ---------------------------------------------------------------------------

pub fn read_grids(path: &Path, resolution_m: Option<f64>) -> Result<Vec<ForecastGrid>> {
    read_input(path, |r| read_grid_csv(r, resolution_m))
}

/// Blend every fine forecast with the coarse forecast of the same issue date.
pub fn blend_grids(fine: &[ForecastGrid], coarse: &[ForecastGrid]) -> Result<Vec<ForecastGrid>> {
    if let ([f], [c]) = (fine, coarse) {
        return Ok(vec![compose_art(f, c)?]);
    }
    fine.iter()
        .map(|f| {
            let c = coarse.iter().find(|c| c.issue_date() == f.issue_date()).ok_or_else(|| {
                // name the closest coarse issue in the message
                let closest = coarse
                    .iter()
                    .min_by_key(|c| (c.issue_date() - f.issue_date()).num_days().abs())
                    .map(ForecastGrid::issue_date)
                    .unwrap_or(f.issue_date());
                Error::IssueDateMismatch {
                    fine: f.issue_date(),
                    coarse: closest,
                }
            })?;
            compose_art(f, c)
        })
        .collect()
}

pub fn cmd_blend(coarse: &Path, fine: &Path, out: &Path, resolution_m: Option<f64>) -> Result<Vec<ForecastGrid>> {
    let coarse = read_grids(coarse, resolution_m)?;
    let fine = read_grids(fine, resolution_m)?;
    let art = blend_grids(&fine, &coarse)?;
    write_grid_csv(create(out)?, &art)?;
    Ok(art)
}

pub fn load_rules(path: Option<&Path>) -> Result<SowingRules> {
    match path {
        None => Ok(default_rules()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| input_error(p, e))?;
            KeyValues::parse(&text)
                .and_then(|kv| default_rules().with_overrides(&kv))
                .map_err(|e| input_error(p, e))
        }
    }
}

pub fn cmd_recommend(
    art: &Path,
    rules: Option<&Path>,
    date: NaiveDate,
    out: &Path,
    raster: Option<&Path>,
    resolution_m: Option<f64>,
) -> Result<Vec<Recommendation>> {
    let rules = load_rules(rules)?;
    let grids = read_grids(art, resolution_m)?;
    let grid = grids
        .iter()
        .find(|g| g.issue_date() == date)
        .ok_or_else(|| input_error(art, format!("no forecast issued on {date}")))?;
    let map = daily_map(grid, &rules, date)?;
    write_map_csv(create(out)?, &map)?;
    if let Some(r) = raster {
        write_map_pgm(create(r)?, &map)?;
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------------

pub fn load_graph(path: Option<&Path>) -> Result<CausalDag> {
    match path {
        None => CausalDag::parse(FARM_GRAPH),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| input_error(p, e))?;
            CausalDag::parse(&text).map_err(|e| input_error(p, e))
        }
    }
}

fn braces<S: AsRef<str>>(nodes: impl IntoIterator<Item = S>) -> String {
    let v: Vec<String> = nodes.into_iter().map(|s| s.as_ref().to_string()).collect();
    format!("{{{}}}", v.join(", "))
}

/// Print the valid back-door sets and a verdict on `check` (the farm
/// adjustment set when the graph has all of its nodes).
pub fn cmd_identify(
    graph: Option<&Path>,
    max_results: usize,
    check: Option<Vec<String>>,
    out: &mut dyn Write,
) -> Result<()> {
    let dag = load_graph(graph)?;
    writeln!(out, "treatment {}, outcome {}", dag.treatment(), dag.outcome())?;
    let constants = dag.constants();
    if !constants.is_empty() {
        writeln!(out, "held constant: {}", braces(&constants))?;
    }
    let latents = dag.latents();
    if !latents.is_empty() {
        writeln!(out, "latent: {}", braces(&latents))?;
    }
    let sets = dag.enumerate_backdoor_sets(max_results);
    if sets.is_empty() {
        writeln!(out, "no back-door set")?;
    } else {
        writeln!(out, "valid back-door sets:")?;
        for s in &sets {
            let tag = if s.minimal { "  (minimal)" } else { "" };
            writeln!(out, "  {}{tag}", braces(&s.nodes))?;
        }
    }
    let check = check.or_else(|| {
        FARM_ADJUSTMENT_SET
            .iter()
            .all(|n| dag.contains(n))
            .then(|| FARM_ADJUSTMENT_SET.iter().map(|s| s.to_string()).collect())
    });
    if let Some(z) = check {
        let verdict = dag.is_backdoor_set(&z)?;
        let text = match (verdict.valid, verdict.minimal) {
            (true, true) => "valid, minimal",
            (true, false) => "valid, not minimal",
            _ => "not a valid back-door set",
        };
        writeln!(out, "check {}: {text}", braces(&verdict.nodes))?;
    }
    Ok(())
}

fn choose_adjustment(dag: &CausalDag, requested: Option<&[String]>) -> Result<Vec<String>> {
    match requested {
        Some(z) => {
            let verdict = dag.is_backdoor_set(z)?;
            if !verdict.valid {
                return Err(Error::invalid(format!(
                    "adjustment set {} does not satisfy the back-door criterion",
                    braces(&verdict.nodes)
                )));
            }
            Ok(verdict.nodes.into_iter().collect())
        }
        None => dag
            .enumerate_backdoor_sets(usize::MAX)
            .into_iter()
            .find(|s| s.minimal)
            .map(|s| s.nodes.into_iter().collect())
            .ok_or_else(|| Error::invalid("no back-door set")),
    }
}

// ---------------------------------------------------------------------------
// estimate / refute
// ---------------------------------------------------------------------------

fn load_fields(cfg: &PipelineConfig) -> Result<Vec<FieldRecord>> {
    let path = require(&cfg.fields, "fields")?;
    read_input(path, read_fields_csv)
}

fn group_maps(maps: Vec<Recommendation>) -> BTreeMap<NaiveDate, Vec<Recommendation>> {
    let mut by_date: BTreeMap<NaiveDate, Vec<Recommendation>> = BTreeMap::new();
    for r in maps {
        by_date.entry(r.date).or_default().push(r);
    }
    by_date
}

/// Fields paired with treatment bits, from `maps` when configured and from
/// the fields' own treatment column otherwise.
fn labeled_fields(cfg: &PipelineConfig) -> Result<Vec<(FieldRecord, u8)>> {
    let fields = load_fields(cfg)?;
    match &cfg.maps {
        Some(p) => {
            let maps = read_input(p, read_map_csv)?;
            label_treatment(&fields, &group_maps(maps))
        }
        None => labeled_from_records(&fields),
    }
}

fn crop_growth(path: &Path, labeled: &[(FieldRecord, u8)]) -> Result<CropGrowthSummary> {
    let ndvi = read_input(path, read_ndvi_csv)?;
    let mut arms: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (f, t) in labeled {
        let Some(series) = ndvi.get(&f.field_id) else {
            continue;
        };
        match crop_growth_index(series, f) {
            Ok(cg) => arms[usize::from(*t)].push(cg),
            Err(e) => log::debug!("no crop growth index for {}: {e}", f.field_id),
        }
    }
    let arm_mean = |v: &Vec<f64>| (!v.is_empty()).then(|| mean(v));
    Ok(CropGrowthSummary {
        fields: arms[0].len() + arms[1].len(),
        treated_mean: arm_mean(&arms[1]),
        control_mean: arm_mean(&arms[0]),
    })
}

/// Adjustment, dataset assembly, propensity model, trimming and the
/// per-method estimates. Returns the report and the trimmed dataset.
fn analyse(
    cfg: &PipelineConfig,
    labeled: &[(FieldRecord, u8)],
    adjustment: Option<&[String]>,
) -> Result<(RunReport, EvalDataset)> {
    let dag = load_graph(cfg.graph.as_deref())?;
    let adjustment = choose_adjustment(&dag, adjustment.or(cfg.adjustment.as_deref()))?;
    let constants = dag.constants();
    let data_nodes: Vec<&str> = adjustment
        .iter()
        .filter(|n| !constants.contains(*n))
        .map(String::as_str)
        .collect();
    log::info!("adjusting for {}", braces(&adjustment));
    let asm = assemble(labeled, &data_nodes)?;
    let full = &asm.dataset;
    let pm = fit_propensity(full)?;
    if !pm.converged {
        log::warn!("propensity model did not converge in {} iterations", pm.iterations);
    }
    let (trimmed, _) = trim(full, &pm.scores, cfg.trim_low, cfg.trim_high)?;
    log::info!(
        "trimming kept {} of {} rows ({} treated, {} control)",
        trimmed.n_rows(),
        full.n_rows(),
        trimmed.n_treated(),
        trimmed.n_control()
    );

    let opts = EstimateOptions {
        bootstrap_iterations: cfg.bootstrap,
        seed: cfg.seed,
        forest: cfg.forest.clone(),
        threads: cfg.threads,
        null_value: 0.0,
    };
    let mut estimates = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        log::info!("estimating with {m}");
        estimates.push(estimate(m, &trimmed, &opts)?);
    }
    let crop_growth = cfg.ndvi.as_deref().map(|p| crop_growth(p, labeled)).transpose()?;

    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        adjustment_set: adjustment,
        covariates: full.covariate_names().iter().map(|s| s.to_string()).collect(),
        dataset: DatasetSummary {
            rows_in: asm.rows_in,
            dropped_missing: asm.dropped_missing,
            rows: full.n_rows(),
            treated: full.n_treated(),
            control: full.n_control(),
            trim_low: cfg.trim_low,
            trim_high: cfg.trim_high,
            rows_trimmed: trimmed.n_rows(),
            treated_trimmed: trimmed.n_treated(),
            control_trimmed: trimmed.n_control(),
            dropped_zero_variance: asm.dropped_zero_variance.clone(),
        },
        propensity: PropensitySummary {
            metrics: pm.metrics,
            converged: pm.converged,
            iterations: pm.iterations,
        },
        bootstrap_iterations: cfg.bootstrap,
        forest: cfg.forest.clone(),
        estimates,
        refutations: BTreeMap::new(),
        crop_growth,
        verification: Vec::new(),
    };
    Ok((report, trimmed))
}

/// Run the configured refutations for every estimate in `report`. UCC grids
/// go to `ucc_<method>.csv` in the output directory.
fn refute_all(cfg: &PipelineConfig, report: &mut RunReport, data: &EvalDataset) -> Result<()> {
    if cfg.reps == 0 {
        return Err(Error::InvalidRepetitions(0));
    }
    let seed = report.seed;
    for est in &report.estimates {
        let m = est.method;
        let estimator = refit_estimator(m, report.forest.clone());
        let mut results = Vec::new();
        for &test in &cfg.refute {
            log::info!("refuting {m} with {test}");
            let r = match test {
                RefutationTest::Placebo => refute_placebo(&estimator, data, cfg.reps, seed, cfg.threads)?,
                RefutationTest::Rcc => refute_random_common_cause(&estimator, data, cfg.reps, seed, cfg.threads)?,
                RefutationTest::Rsr => {
                    refute_subset_removal(&estimator, data, cfg.drop_fraction, cfg.reps, seed, cfg.threads)?
                }
                RefutationTest::Ucc => {
                    let grid =
                        refute_unobserved_common_cause(&estimator, data, &cfg.kappa_t, &cfg.kappa_y, seed, cfg.threads)?;
                    grid.write_csv(create(&cfg.out_dir.join(format!("ucc_{m}.csv")))?)?;
                    grid.result()
                }
            };
            results.push(r);
        }
        report.refutations.insert(m.name().to_string(), results);
    }
    Ok(())
}

pub fn cmd_estimate(cfg: &PipelineConfig, report_path: &Path) -> Result<RunReport> {
    let labeled = labeled_fields(cfg)?;
    let (report, _) = analyse(cfg, &labeled, None)?;
    report.write_to(report_path)?;
    Ok(report)
}

/// Add refutations to a report produced by `estimate`. The dataset is
/// rebuilt from the configured inputs with the report's adjustment set,
/// trim bounds, methods and forest settings.
pub fn cmd_refute(cfg: &PipelineConfig, report_in: &Path, report_out: &Path) -> Result<RunReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidRepetitions(0));
    }
    let mut report = RunReport::read(report_in)?;
    let labeled = labeled_fields(cfg)?;
    let dag = load_graph(cfg.graph.as_deref())?;
    let constants = dag.constants();
    let data_nodes: Vec<&str> = report
        .adjustment_set
        .iter()
        .filter(|n| !constants.contains(*n))
        .map(String::as_str)
        .collect();
    let asm = assemble(&labeled, &data_nodes)?;
    let pm = fit_propensity(&asm.dataset)?;
    let (trimmed, _) = trim(&asm.dataset, &pm.scores, report.dataset.trim_low, report.dataset.trim_high)?;
    if trimmed.n_rows() != report.dataset.rows_trimmed || trimmed.n_treated() != report.dataset.treated_trimmed {
        return Err(input_error(report_in, "report does not match the configured input data"));
    }
    report.seed = cfg.seed;
    report.refutations.clear();
    refute_all(cfg, &mut report, &trimmed)?;
    report.write_to(report_out)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct Truth<'a> {
    schema_version: u32,
    ate: f64,
    oracle_ate: f64,
    oracle_se: f64,
    oracle_draws: usize,
    prevalence: f64,
    config: &'a ScmConfig,
}

pub fn load_scm_config(path: Option<&Path>) -> Result<ScmConfig> {
    match path {
        None => Ok(ScmConfig::default()),
        Some(p) => read_input(p, |r| Ok(serde_json::from_reader(r)?)),
    }
}

/// Write `<prefix>_fields.csv` and `<prefix>_truth.json`.
pub fn cmd_synth(cfg: &ScmConfig, prefix: &str) -> Result<(PathBuf, PathBuf)> {
    let syn = generate(cfg)?;
    let (oracle, se) = oracle_ate(cfg, ORACLE_DRAWS, cfg.seed)?;
    let fields_path = PathBuf::from(format!("{prefix}_fields.csv"));
    let truth_path = PathBuf::from(format!("{prefix}_truth.json"));
    write_fields_csv(create(&fields_path)?, &syn.fields)?;
    let truth = Truth {
        schema_version: SCHEMA_VERSION,
        ate: syn.true_ate,
        oracle_ate: oracle,
        oracle_se: se,
        oracle_draws: ORACLE_DRAWS,
        prevalence: syn.prevalence,
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&truth)?;
    text.push('\n');
    std::fs::write(&truth_path, text)?;
    Ok((fields_path, truth_path))
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

fn verification(
    station_path: &Path,
    cfg: &PipelineConfig,
    sources: &[(&str, &[ForecastGrid])],
) -> Result<Vec<VerificationEntry>> {
    let location = cfg.station_location.expect("validated with the station path");
    let station = read_input(station_path, |r| read_station_csv(r, location))?;
    let mut out = Vec::new();
    for &(source, grids) in sources {
        let horizon = grids.iter().map(ForecastGrid::horizon).max().unwrap_or(0);
        for variable in Variable::ALL {
            for lead in 1..=horizon {
                match verify_forecast(grids, &station, lead, variable) {
                    Ok(v) => out.push(VerificationEntry {
                        source: source.to_string(),
                        variable,
                        lead,
                        mae: v.mae,
                        rmse: v.rmse,
                        n: v.n,
                    }),
                    Err(Error::NoMatchingDates) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(out)
}

/// blend → recommend → label → identify → estimate → refute, keeping every
/// intermediate file in the output directory. Forecast steps run only when
/// both forecast inputs are configured.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let dir = &cfg.out_dir;
    let mut forecasts = None;
    let labeled = match (&cfg.coarse, &cfg.fine) {
        (Some(coarse_path), Some(fine_path)) => {
            log::info!("blending forecasts");
            let coarse = read_grids(coarse_path, cfg.grid_resolution_m)?;
            let fine = read_grids(fine_path, cfg.grid_resolution_m)?;
            let art = blend_grids(&fine, &coarse)?;
            write_grid_csv(create(&dir.join("art.csv"))?, &art)?;

            log::info!("building recommendation maps for {} issue dates", art.len());
            let rules = load_rules(cfg.rules.as_deref())?;
            let mut all = Vec::new();
            for g in &art {
                all.extend(daily_map(g, &rules, g.issue_date())?);
            }
            write_map_csv(create(&dir.join("maps.csv"))?, &all)?;

            let fields = load_fields(cfg)?;
            let labeled = label_treatment(&fields, &group_maps(all))?;
            let with_labels: Vec<FieldRecord> = labeled
                .iter()
                .map(|(f, t)| FieldRecord {
                    treatment: Some(*t),
                    ..f.clone()
                })
                .collect();
            write_fields_csv(create(&dir.join("labeled_fields.csv"))?, &with_labels)?;
            forecasts = Some((coarse, fine, art));
            labeled
        }
        (None, None) => labeled_fields(cfg)?,
        _ => return Err(Error::invalid("`coarse` and `fine` must be given together")),
    };

    let mut ident = Vec::new();
    cmd_identify(cfg.graph.as_deref(), 20, None, &mut ident)?;
    std::fs::write(dir.join("identify.txt"), ident)?;

    let (mut report, trimmed) = analyse(cfg, &labeled, None)?;
    if !cfg.refute.is_empty() {
        refute_all(cfg, &mut report, &trimmed)?;
    }
    if let Some(station) = &cfg.station {
        let Some((coarse, fine, art)) = &forecasts else {
            return Err(Error::invalid("station verification needs `coarse` and `fine`"));
        };
        report.verification = verification(station, cfg, &[("coarse", coarse), ("fine", fine), ("art", art)])?;
    }
    report.write_to(&dir.join("report.json"))?;
    Ok(report)
}
