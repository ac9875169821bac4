//! Synthetic farm-system data from a linear-Gaussian structural model.
//!
//! Covariates are drawn first, then treatment from a logistic model, then
//! crop growth (CG), harvest date (HD) and yield (Y):
//!
//! ```text
//! T  ~ Bernoulli(sigmoid(c + Σ w_t·x))
//! CG = beta_t·T + Σ w_cg·x + w_was·WaS + e_cg
//! HD = gamma_hd·CG + e_hd
//! Y  = y0 + delta_cg·CG + delta_hd·HD + w_sv·sv + e_y
//! ```
//!
//! Seed variety reaches yield directly rather than through growth, as in the
//! farm graph. Each `x` is a standardized summary of its covariate, so the
//! weights are comparable across nodes.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{assemble, EvalDataset, FieldRecord};
use crate::rng::{stream, Rng};
use crate::stats::{mean, sample_std, sigmoid};
use crate::{Error, Result};

/// Covariate nodes with a data column in synthetic records.
pub const SCM_COVARIATES: [&str; 6] = ["WS", "SoC", "SM", "G", "SP", "SV"];
pub const N_VARIETIES: usize = 13;

const WS_MIN_MEAN: f64 = 12.0;
const WS_MIN_SD: f64 = 3.0;
const WS_SPREAD_MEAN: f64 = 10.0;
const WS_SPREAD_SD: f64 = 2.0;
const SOC_MEDIAN: f64 = 10.0;
const SOC_SIGMA: f64 = 0.3;
const NDWI_MEAN: f64 = 0.05;
const NDWI_SD: f64 = 0.12;
const TEXTURE_ALPHA: f64 = 4.0;
const AREA_MEDIAN: f64 = 20_000.0;
const AREA_SIGMA: f64 = 0.5;
const SHAPE_MEDIAN: f64 = 1.1;
const SHAPE_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfounderWeight {
    /// Weight on the treatment logit.
    pub treatment: f64,
    /// Weight on crop growth (on yield for seed variety).
    pub growth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSds {
    pub cg: f64,
    pub hd: f64,
    pub y: f64,
}

impl Default for NoiseSds {
    fn default() -> Self {
        Self {
            cg: 0.3,
            hd: 0.5,
            y: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScmConfig {
    pub n: usize,
    pub beta_t: f64,
    pub delta_cg: f64,
    pub gamma_hd: f64,
    pub delta_hd: f64,
    /// Keyed by graph node: WS, SoC, SM, G, SP, SV. Missing nodes weigh 0.
    pub confounders: BTreeMap<String, ConfounderWeight>,
    /// Weight of the unobserved water supply on crop growth.
    pub was_weight: f64,
    pub noise: NoiseSds,
    pub treatment_intercept: f64,
    pub outcome_intercept: f64,
    pub seed: u64,
}

impl Default for ScmConfig {
    fn default() -> Self {
        let w = |treatment, growth| ConfounderWeight { treatment, growth };
        let confounders = [
            ("WS", w(0.4, 0.06)),
            ("SoC", w(0.3, 0.05)),
            ("SM", w(0.4, 0.06)),
            ("G", w(-0.3, -0.05)),
            ("SP", w(0.3, 0.05)),
            ("SV", w(0.3, 0.05)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            n: 2000,
            beta_t: 2.0,
            delta_cg: 1.5,
            gamma_hd: 1.0,
            delta_hd: 0.5,
            confounders,
            was_weight: 0.3,
            noise: NoiseSds::default(),
            treatment_intercept: -0.5,
            outcome_intercept: 50.0,
            seed: 0,
        }
    }
}

impl ScmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::invalid(format!("n must be at least 10, got {}", self.n)));
        }
        let NoiseSds { cg, hd, y } = self.noise;
        if !(cg > 0.0 && hd > 0.0 && y > 0.0) || ![cg, hd, y].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("noise standard deviations must be positive"));
        }
        for key in self.confounders.keys() {
            if !SCM_COVARIATES.contains(&key.as_str()) {
                return Err(Error::invalid(format!(
                    "unknown confounder `{key}` (expected one of {})",
                    SCM_COVARIATES.join(", ")
                )));
            }
        }
        let coefs = [
            self.beta_t,
            self.delta_cg,
            self.gamma_hd,
            self.delta_hd,
            self.was_weight,
            self.treatment_intercept,
            self.outcome_intercept,
        ];
        let weights = self.confounders.values().flat_map(|w| [w.treatment, w.growth]);
        if !coefs.into_iter().chain(weights).all(f64::is_finite) {
            return Err(Error::invalid("SCM coefficients must be finite"));
        }
        Ok(())
    }

    /// beta_t·(delta_cg + delta_hd·gamma_hd)
    pub fn analytic_ate(&self) -> f64 {
        self.beta_t * (self.delta_cg + self.delta_hd * self.gamma_hd)
    }

    fn weight(&self, node: &str) -> ConfounderWeight {
        self.confounders.get(node).copied().unwrap_or(ConfounderWeight {
            treatment: 0.0,
            growth: 0.0,
        })
    }
}

/// Raw covariate draws for one field.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Draw {
    ws_min: f64,
    ws_max: f64,
    soc: f64,
    ndwi: f64,
    clay: f64,
    silt: f64,
    sand: f64,
    variety: usize,
    area: f64,
    perimeter: f64,
    was: f64,
}

fn lognormal_moments(mu: f64, sigma: f64) -> (f64, f64) {
    let mean = (mu + sigma * sigma / 2.0).exp();
    (mean, mean * ((sigma * sigma).exp() - 1.0).sqrt())
}

impl Draw {
    fn sample(rng: &mut Rng) -> Self {
        let normal = |rng: &mut Rng, m: f64, s: f64| Normal::new(m, s).expect("valid normal").sample(rng);
        let lognormal = |rng: &mut Rng, median: f64, s: f64| {
            LogNormal::new(median.ln(), s).expect("valid lognormal").sample(rng)
        };
        let ws_min = normal(rng, WS_MIN_MEAN, WS_MIN_SD);
        let ws_max = ws_min + normal(rng, WS_SPREAD_MEAN, WS_SPREAD_SD);
        let soc = lognormal(rng, SOC_MEDIAN, SOC_SIGMA);
        let ndwi = normal(rng, NDWI_MEAN, NDWI_SD).clamp(-1.0, 1.0);
        let gamma = Gamma::new(TEXTURE_ALPHA, 1.0).expect("valid gamma");
        let g: [f64; 3] = [gamma.sample(rng), gamma.sample(rng), gamma.sample(rng)];
        let total: f64 = g.iter().sum();
        // soil maps report percentages to one decimal
        let pct = |x: f64| (1000.0 * x / total).round() / 10.0;
        let variety = rng.random_range(1..=N_VARIETIES);
        let area = lognormal(rng, AREA_MEDIAN, AREA_SIGMA);
        let perimeter = 4.0 * area.sqrt() * lognormal(rng, SHAPE_MEDIAN, SHAPE_SIGMA);
        let was = StandardNormal.sample(rng);
        Self {
            ws_min,
            ws_max,
            soc,
            ndwi,
            clay: pct(g[0]),
            silt: pct(g[1]),
            sand: pct(g[2]),
            variety,
            area,
            perimeter,
            was,
        }
    }

    /// Standardized summaries in `SCM_COVARIATES` order, using population
    /// moments of the generating distributions.
    fn features(&self) -> [f64; 6] {
        let ws_mean = WS_MIN_MEAN + WS_SPREAD_MEAN / 2.0;
        let ws_sd = (WS_MIN_SD.powi(2) + (WS_SPREAD_SD / 2.0).powi(2)).sqrt();
        let (soc_m, soc_s) = lognormal_moments(SOC_MEDIAN.ln(), SOC_SIGMA);
        // clay - sand under a symmetric Dirichlet, in percent
        let a0 = 3.0 * TEXTURE_ALPHA;
        let sp_sd = 100.0 * (2.0 * TEXTURE_ALPHA / (a0 * (a0 + 1.0))).sqrt();
        // G = 4·shape/sqrt(area) is log-normal
        let g_mu = (4.0 * SHAPE_MEDIAN).ln() - 0.5 * AREA_MEDIAN.ln();
        let g_sigma = (SHAPE_SIGMA.powi(2) + (AREA_SIGMA / 2.0).powi(2)).sqrt();
        let (g_m, g_s) = lognormal_moments(g_mu, g_sigma);
        let k = N_VARIETIES as f64;
        let sv_mean = (k + 1.0) / 2.0;
        let sv_sd = ((k * k - 1.0) / 12.0).sqrt();
        [
            ((self.ws_min + self.ws_max) / 2.0 - ws_mean) / ws_sd,
            (self.soc - soc_m) / soc_s,
            (self.ndwi - NDWI_MEAN) / NDWI_SD,
            (self.perimeter / self.area - g_m) / g_s,
            (self.clay - self.sand) / sp_sd,
            (self.variety as f64 - sv_mean) / sv_sd,
        ]
    }
}

/// Unobserved quantities kept alongside each synthetic row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HiddenRow {
    pub cg: f64,
    pub hd: f64,
    pub was: f64,
    pub propensity: f64,
    /// Standardized covariate summaries driving the model.
    pub features: [f64; 6],
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub fields: Vec<FieldRecord>,
    pub treatment: Vec<u8>,
    pub hidden: Vec<HiddenRow>,
    /// Estimation matrix over all observed covariate nodes.
    pub dataset: EvalDataset,
    pub true_ate: f64,
    pub prevalence: f64,
}

struct Structural {
    t_logit: f64,
    cg_base: f64,
    y_base: f64,
}

fn structural(cfg: &ScmConfig, feats: &[f64; 6], was: f64) -> Structural {
    let mut t_logit = cfg.treatment_intercept;
    let mut cg_base = cfg.was_weight * was;
    let mut y_base = cfg.outcome_intercept;
    for (node, x) in SCM_COVARIATES.iter().zip(feats) {
        let w = cfg.weight(node);
        t_logit += w.treatment * x;
        if *node == "SV" {
            y_base += w.growth * x;
        } else {
            cg_base += w.growth * x;
        }
    }
    Structural {
        t_logit,
        cg_base,
        y_base,
    }
}

fn outcome_given(cfg: &ScmConfig, s: &Structural, t: f64, e: (f64, f64, f64)) -> (f64, f64, f64) {
    let cg = cfg.beta_t * t + s.cg_base + e.0;
    let hd = cfg.gamma_hd * cg + e.1;
    let y = s.y_base + cfg.delta_cg * cg + cfg.delta_hd * hd + e.2;
    (cg, hd, y)
}

fn noises(cfg: &ScmConfig, rng: &mut Rng) -> (f64, f64, f64) {
    let z = |rng: &mut Rng| -> f64 { StandardNormal.sample(rng) };
    (cfg.noise.cg * z(rng), cfg.noise.hd * z(rng), cfg.noise.y * z(rng))
}

/// Sample `cfg.n` fields by ancestral sampling.
pub fn generate(cfg: &ScmConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 0);
    let season: NaiveDate = NaiveDate::from_ymd_opt(2021, 4, 1).expect("valid date");
    let mut fields = Vec::with_capacity(cfg.n);
    let mut treatment = Vec::with_capacity(cfg.n);
    let mut hidden = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let d = Draw::sample(&mut rng);
        let feats = d.features();
        let s = structural(cfg, &feats, d.was);
        let propensity = sigmoid(s.t_logit);
        let t = u8::from(rng.random::<f64>() < propensity);
        let (cg, hd, y) = outcome_given(cfg, &s, f64::from(t), noises(cfg, &mut rng));
        let sowing = season + Days::new((i % 45) as u64);
        let rec = FieldRecord {
            field_id: format!("syn{:05}", i + 1),
            sowing_date: sowing,
            harvest_date: sowing + Days::new(150),
            yield_kg_ha: y,
            seed_variety: format!("SV{}", d.variety),
            perimeter_m: d.perimeter,
            area_m2: d.area,
            clay_pct: d.clay,
            silt_pct: d.silt,
            sand_pct: d.sand,
            soc_g_kg: Some(d.soc),
            ws_min_c: Some(d.ws_min),
            ws_max_c: Some(d.ws_max),
            ndwi_sowing: Some(d.ndwi),
            location: None,
            treatment: Some(t),
        };
        if !(y > 0.0) {
            return Err(Error::invalid(format!(
                "synthetic yield {y} is not positive; raise outcome_intercept"
            )));
        }
        fields.push(rec);
        treatment.push(t);
        hidden.push(HiddenRow {
            cg,
            hd,
            was: d.was,
            propensity,
            features: feats,
        });
    }
    let prevalence = treatment.iter().map(|&t| f64::from(t)).sum::<f64>() / cfg.n as f64;
    if !(0.05..=0.95).contains(&prevalence) {
        return Err(Error::DegenerateTreatment(prevalence));
    }
    let labeled: Vec<(FieldRecord, u8)> = fields.iter().cloned().zip(treatment.iter().copied()).collect();
    let dataset = assemble(&labeled, &SCM_COVARIATES)?.dataset;
    Ok(SyntheticData {
        fields,
        treatment,
        hidden,
        dataset,
        true_ate: cfg.analytic_ate(),
        prevalence,
    })
}

/// Monte-Carlo E[Y | do(T=1)] − E[Y | do(T=0)] with shared noise per draw.
/// Returns the mean paired difference and its standard error.
pub fn oracle_ate(cfg: &ScmConfig, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    cfg.validate()?;
    if n_mc < 1000 {
        return Err(Error::invalid(format!("oracle needs at least 1000 draws, got {n_mc}")));
    }
    let mut rng = stream(seed, 1);
    let diffs: Vec<f64> = (0..n_mc)
        .map(|_| {
            let d = Draw::sample(&mut rng);
            let s = structural(cfg, &d.features(), d.was);
            let e = noises(cfg, &mut rng);
            outcome_given(cfg, &s, 1.0, e).2 - outcome_given(cfg, &s, 0.0, e).2
        })
        .collect();
    Ok((mean(&diffs), sample_std(&diffs) / (n_mc as f64).sqrt()))
}
