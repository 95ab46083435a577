//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- input / data model ----
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column '{column}' in input header")]
    MissingColumn { column: String },
    #[error("missing value in column '{column}' at data row {row}")]
    MissingValue { column: String, row: usize },
    #[error("cannot parse '{value}' in column '{column}' at data row {row} as a number")]
    ParseNumber {
        column: String,
        row: usize,
        value: String,
    },
    #[error("{field} must be 0 or 1, got {value} at data row {row}")]
    NonBinary {
        field: String,
        value: f64,
        row: usize,
    },
    #[error("observed time must be finite and nonnegative, got {value} at data row {row}")]
    InvalidTime { value: f64, row: usize },
    #[error("covariate vector length {got} differs from expected {expected}")]
    CovariateLength { expected: usize, got: usize },
    #[error("region '{label}' has fewer than 2 subjects")]
    RegionTooSmall { label: String },
    #[error("region '{label}' has subjects in only one treatment arm")]
    SingleArmRegion { label: String },
    #[error("dataset needs at least {needed} regions, found {found}")]
    TooFewRegions { needed: usize, found: usize },
    #[error("treatment propensity must lie in (0,1), got {value} for subject {subject}")]
    InvalidPropensity { value: f64, subject: usize },
    #[error("dataset is empty")]
    EmptyDataset,

    // ---- covariate-function spec ----
    #[error(
        "g-spec term '{term}' references covariate index {index} but only {p} covariates exist"
    )]
    GSpecIndex {
        term: String,
        index: usize,
        p: usize,
    },
    #[error("cannot parse g-spec term '{term}'")]
    GSpecParse { term: String },

    // ---- calibration ----
    #[error(
        "calibration infeasible for region {region}: max constraint violation {violation:.3e} \
         on '{worst}' after {iterations} iterations; the target moment lies outside the \
         region's covariate support"
    )]
    CalibrationInfeasible {
        region: u32,
        violation: f64,
        worst: String,
        iterations: usize,
    },
    #[error(
        "degenerate moment functions for region {region}: dual Hessian singular after \
         regularization (collinear g functions)"
    )]
    DegenerateMoments { region: u32 },
    #[error("region {region}: {l} moment constraints need more than {l} subjects, n = {n}")]
    TooManyConstraints { region: u32, l: usize, n: usize },

    // ---- sampling weights ----
    #[error("sampling score underflow for region {region} subject {subject}: trial-participation positivity violated")]
    ScorePositivity { region: u32, subject: usize },
    #[error("no sampling-score coefficients supplied for region {region}")]
    MissingRegionCoefficients { region: u32 },
    #[error(
        "sampling score model '{kind}' requires exactly {needed} covariates, dataset has {got}"
    )]
    ScoreModelArity {
        kind: String,
        needed: usize,
        got: usize,
    },
    #[error("design matrix rank deficient: column '{column}' is collinear with earlier columns")]
    RankDeficient { column: String },
    #[error("region-membership model did not converge within {max_iter} iterations")]
    MembershipNonConvergence { max_iter: usize },

    // ---- survival ----
    #[error("no at-risk mass in arm {arm} of region {region}")]
    EmptyArm { region: u32, arm: u8 },
    #[error(
        "censoring survival reaches 0 before the truncation time in region {region}: \
         IPC weight undefined for subject {subject}"
    )]
    CensoringSupport { region: u32, subject: usize },
    #[error("arm {arm} of region {region} has zero weighted mass; estimate undefined")]
    ArmNotEstimable { region: u32, arm: u8 },

    // ---- regression ----
    #[error("RMST regression (log link) did not converge within {max_iter} iterations")]
    RegressionNonConvergence { max_iter: usize },

    // ---- inference ----
    #[error("consistency test needs at least 2 region estimates, got {got}")]
    TooFewEstimates { got: usize },
    #[error("degenerate variance {variance} for region {region}; Wald statistic undefined")]
    DegenerateVariance { region: u32, variance: f64 },
    #[error("estimates passed to {operation} must share the estimator tag and truncation time")]
    MixedEstimates { operation: String },

    // ---- numerics / simulation ----
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("unknown scenario id {0} (expected 1-4)")]
    UnknownScenario(u32),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
