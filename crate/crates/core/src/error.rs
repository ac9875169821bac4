use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no samples")]
    NoSamples,

    #[error("invalid temperature: {0} K")]
    InvalidTemperature(f64),

    #[error("point ({lat}, {lon}) lies outside the grid bounding box")]
    OutsideGrid { lat: f64, lon: f64 },

    #[error("issue dates differ: fine grid {fine}, coarse grid {coarse}")]
    IssueDateMismatch { fine: NaiveDate, coarse: NaiveDate },

    #[error("insufficient horizon: need {needed} days, got {got}")]
    InsufficientHorizon { needed: usize, got: usize },

    #[error("no matching dates")]
    NoMatchingDates,

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("cycle detected: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("missing {0} declaration")]
    MissingDeclaration(&'static str),

    #[error("node sets overlap: {0}")]
    OverlappingSets(String),

    #[error("no map for sowing date of field(s): {}", .0.join(", "))]
    MissingMap(Vec<String>),

    #[error("no overlap: trimming removed every row")]
    NoOverlap,

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("treatment has a single class")]
    SingleClass,

    #[error("untrimmed extreme score {score} at row {row}")]
    UntrimmedScore { row: usize, score: f64 },

    #[error("{group} group has {size} rows, need at least {needed}")]
    GroupTooSmall {
        group: &'static str,
        size: usize,
        needed: usize,
    },

    #[error("{failed} of {total} resamples failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("degenerate treatment assignment: prevalence {0:.3}")]
    DegenerateTreatment(f64),

    #[error("invalid repetitions: {0}")]
    InvalidRepetitions(usize),

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {message}")]
    Input { path: String, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures caused by bad input rather than the environment.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
