//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("identifier {raw:?} normalizes to nothing")]
    EmptyIdentifier { raw: String },
    #[error("duplicate target label {label:?}")]
    DuplicateLabel { label: String },
    #[error("need at least 2 target labels, got {count}")]
    TooFewLabels { count: usize },
    #[error("duplicate feature name {name:?} after normalization")]
    DuplicateFeature { name: String },
    #[error("feature {feature:?}: lower bound {lower} is not below upper bound {upper}")]
    BadBounds {
        feature: String,
        lower: f64,
        upper: f64,
    },
    #[error("feature {feature:?}: duplicate category {category:?} after normalization")]
    DuplicateCategory { feature: String, category: String },
    #[error("feature {feature:?} needs at least 2 distinct categories")]
    TooFewCategories { feature: String },
    #[error("schema file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("unknown feature {feature:?}")]
    UnknownFeature { feature: String },
    #[error("feature {feature:?} is not numeric")]
    NotNumeric { feature: String },
    #[error("feature {feature:?} is not categorical")]
    NotCategorical { feature: String },
    #[error("threshold {threshold} for {feature:?} is outside the effective interval ({lower}, {upper})")]
    ThresholdOutOfRange {
        feature: String,
        threshold: f64,
        lower: f64,
        upper: f64,
    },
    #[error("category {category:?} is not allowed for {feature:?} here")]
    NotASubset { feature: String, category: String },
    #[error("empty category subset for {feature:?}")]
    EmptySubset { feature: String },
}

#[derive(Debug, Error)]
pub enum DistributionError {
    #[error("expected {expected} weights, got {got}")]
    LabelMismatch { expected: usize, got: usize },
    #[error("weight for {label:?} is invalid: {weight}")]
    InvalidWeight { label: String, weight: f64 },
    #[error("all weights are zero")]
    AllZero,
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
}

#[derive(Debug, Error)]
pub enum ImpurityError {
    #[error("cannot combine impurities over zero total count")]
    ZeroTotalCount,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no value available for placeholder {{{placeholder}}} in template {template:?}")]
    MissingPlaceholderValue {
        template: String,
        placeholder: String,
    },
    #[error("categorical split needs at least 2 allowed categories, got {count}")]
    TooFewCategories { count: usize },
    #[error("template {id:?}: {reason}")]
    BadTemplate { id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {reason}")]
    Transport { attempts: u32, reason: String },
    #[error("authentication rejected: {reason}")]
    Auth { reason: String },
    #[error("no recording for prompt key {key}")]
    ReplayMiss { key: String },
    #[error("backend response: {0}")]
    BadResponse(String),
}

impl GatewayError {
    pub fn is_auth(&self) -> bool {
        matches!(self, GatewayError::Auth { .. })
    }
}

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("no usable split advice for feature {feature:?}")]
    AdviceUnavailable { feature: String },
    #[error("probability estimation failed after retries")]
    ProbabilityUnavailable,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("could not obtain a root prior distribution")]
    PriorUnavailable,
    #[error("every active feature failed to produce a candidate")]
    NoCandidates,
    #[error("advisor broke its contract: {0}")]
    AdvisorContract(String),
    #[error("invalid build configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Error)]
pub enum TreeFormatError {
    #[error("tree document at {location}: {reason}")]
    Format { location: String, reason: String },
    #[error("unsupported format_version {found} (expected {expected})")]
    VersionMismatch { found: i64, expected: i64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("row is missing a value for feature {feature:?}")]
    MissingValue { feature: String },
    #[error("value {value:?} for feature {feature:?} is not a known category here")]
    UnknownCategory { feature: String, value: String },
    #[error("row value for {feature:?} has the wrong type")]
    TypeMismatch { feature: String },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("CSV header mismatch: missing {missing:?}, extra {extra:?}")]
    HeaderMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("row {row}: label {value:?} is not one of the target labels")]
    LabelOutOfVocabulary { row: usize, value: String },
    #[error("dataset task does not match tree task: {0}")]
    TaskMismatch(String),
    #[error("requested {k} rows but the dataset has {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("context has zero probability mass under the model")]
    UnsatisfiableContext,
    #[error("model file: {0}")]
    Format(String),
    #[error("model does not match task: {0}")]
    TaskMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
