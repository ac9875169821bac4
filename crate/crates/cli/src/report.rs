use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sowcause::estimators::{ClassificationMetrics, EffectEstimate, ForestParams};
use sowcause::refutation::RefutationResult;
use sowcause::weathergrid::Variable;
use sowcause::{Error, Result};

/// Bumped whenever a field changes meaning or disappears.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows_in: usize,
    pub dropped_missing: usize,
    pub rows: usize,
    pub treated: usize,
    pub control: usize,
    pub trim_low: f64,
    pub trim_high: f64,
    pub rows_trimmed: usize,
    pub treated_trimmed: usize,
    pub control_trimmed: usize,
    pub dropped_zero_variance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensitySummary {
    #[serde(flatten)]
    pub metrics: ClassificationMetrics,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropGrowthSummary {
    pub fields: usize,
    pub treated_mean: Option<f64>,
    pub control_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationEntry {
    pub source: String,
    pub variable: Variable,
    pub lead: usize,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub software_version: String,
    pub seed: u64,
    /// Graph nodes adjusted for, constants included.
    pub adjustment_set: Vec<String>,
    /// Estimation matrix columns.
    pub covariates: Vec<String>,
    pub dataset: DatasetSummary,
    pub propensity: PropensitySummary,
    pub bootstrap_iterations: usize,
    pub forest: ForestParams,
    pub estimates: Vec<EffectEstimate>,
    /// Keyed by method name.
    #[serde(default)]
    pub refutations: BTreeMap<String, Vec<RefutationResult>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_growth: Option<CropGrowthSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verification: Vec<VerificationEntry>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let report: RunReport = serde_json::from_str(&text).map_err(|e| Error::Input {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Input {
                path: path.display().to_string(),
                message: format!(
                    "report schema version {} is not supported (expected {SCHEMA_VERSION})",
                    report.schema_version
                ),
            });
        }
        Ok(report)
    }
}
