use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
///
/// Every variant maps to the module that raised it and to a stable code so
/// that scripted callers can match on `code()` instead of message text.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input contains no subjects")]
    EmptyInput,
    #[error("row {row}: column `{column}`: {reason}")]
    MalformedRow {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("row {row}: unknown status code `{value}`")]
    UnknownStatus { row: usize, value: String },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("no subject has the cause of interest ({cause})")]
    NoEventsOfInterest { cause: u32 },
    #[error("covariate dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("censoring survival reaches zero at t = {time} (before tau = {tau}); reduce tau")]
    CensoringExhausted { time: f64, tau: f64 },
    #[error("IPCW weight undefined at t = {time} for subject {subject}: G(T ^ t) = 0")]
    UndefinedWeight { subject: usize, time: f64 },

    #[error("singular first-stage design: column `{column}` is collinear with earlier columns (condition {condition:.3e})")]
    SingularDesign { column: String, condition: f64 },
    #[error("first stage needs n > p + 2 (n = {n}, p = {p})")]
    TooFewSubjects { n: usize, p: usize },

    #[error("S2n is singular or ill-conditioned (condition {condition:.3e}); the instrument is likely too weak to identify the exposure effect")]
    NotIdentifiable { condition: f64 },
    #[error("no events of interest at or before tau = {tau}")]
    EmptyGrid { tau: f64 },
    #[error("risk set exhausted at t = {time} (weighted risk {denominator:.3e})")]
    RiskSetExhausted { time: f64, denominator: f64 },
    #[error("censoring risk set empty at u = {time}")]
    EmptyCensoringRiskSet { time: f64 },

    #[error("prediction time {time} is outside [0, tau = {tau}]")]
    OutsideSupport { time: f64, tau: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("censoring target {target} unreachable for rates in [1e-6, 1e3]")]
    CalibrationFailed { target: f64 },
    #[error("censoring fraction not monotone in rate during calibration")]
    CalibrationNotMonotone,
    #[error("all {reps} replicates failed; last error: {last}")]
    AllReplicatesFailed { reps: usize, last: String },

    #[error("artifact version mismatch: found `{found}`, expected `{expected}`")]
    ArtifactVersion { found: String, expected: String },
    #[error("artifact checksum mismatch (file truncated or corrupt)")]
    ArtifactChecksum,
    #[error("artifact is malformed: {0}")]
    ArtifactFormat(String),
    #[error("dataset digest mismatch: artifact was fitted on {expected}, input hashes to {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error("i/o error on `{path}`: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub fn module(&self) -> &'static str {
        use Error::*;
        match self {
            EmptyInput | MalformedRow { .. } | UnknownStatus { .. } | MissingColumn(_)
            | InvalidSchema(_) | NoEventsOfInterest { .. } | DimensionMismatch { .. }
            | InvalidOption(_) => "data_model",
            CensoringExhausted { .. } | UndefinedWeight { .. } => "censoring_ipcw",
            SingularDesign { .. } | TooFewSubjects { .. } => "first_stage",
            NotIdentifiable { .. } | EmptyGrid { .. } | RiskSetExhausted { .. } => "additive_fit",
            EmptyCensoringRiskSet { .. } => "inference",
            OutsideSupport { .. } => "prediction",
            InvalidScenario(_) | CalibrationFailed { .. } | CalibrationNotMonotone
            | AllReplicatesFailed { .. } => "sim_engine",
            ArtifactVersion { .. } | ArtifactChecksum | ArtifactFormat(_)
            | DigestMismatch { .. } | Io { .. } => "cli_io",
        }
    }

    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            EmptyInput => "E_EMPTY_INPUT",
            MalformedRow { .. } => "E_MALFORMED_ROW",
            UnknownStatus { .. } => "E_UNKNOWN_STATUS",
            MissingColumn(_) => "E_MISSING_COLUMN",
            InvalidSchema(_) => "E_INVALID_SCHEMA",
            NoEventsOfInterest { .. } => "E_NO_EVENTS",
            DimensionMismatch { .. } => "E_DIMENSION",
            InvalidOption(_) => "E_INVALID_OPTION",
            CensoringExhausted { .. } => "E_CENSORING_EXHAUSTED",
            UndefinedWeight { .. } => "E_UNDEFINED_WEIGHT",
            SingularDesign { .. } => "E_SINGULAR_DESIGN",
            TooFewSubjects { .. } => "E_TOO_FEW_SUBJECTS",
            NotIdentifiable { .. } => "E_NOT_IDENTIFIABLE",
            EmptyGrid { .. } => "E_EMPTY_GRID",
            RiskSetExhausted { .. } => "E_RISK_SET_EXHAUSTED",
            EmptyCensoringRiskSet { .. } => "E_EMPTY_CENSORING_RISK_SET",
            OutsideSupport { .. } => "E_OUTSIDE_SUPPORT",
            InvalidScenario(_) => "E_INVALID_SCENARIO",
            CalibrationFailed { .. } => "E_CALIBRATION_FAILED",
            CalibrationNotMonotone => "E_CALIBRATION_NOT_MONOTONE",
            AllReplicatesFailed { .. } => "E_ALL_REPLICATES_FAILED",
            ArtifactVersion { .. } => "E_ARTIFACT_VERSION",
            ArtifactChecksum => "E_ARTIFACT_CHECKSUM",
            ArtifactFormat(_) => "E_ARTIFACT_FORMAT",
            DigestMismatch { .. } => "E_DIGEST_MISMATCH",
            Io { .. } => "E_IO",
        }
    }

    /// Process exit status: 3 for data problems, 4 for numerical or
    /// identifiability failures. Usage errors (2) come from argument parsing.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            CensoringExhausted { .. }
            | UndefinedWeight { .. }
            | SingularDesign { .. }
            | NotIdentifiable { .. }
            | RiskSetExhausted { .. }
            | EmptyCensoringRiskSet { .. }
            | CalibrationFailed { .. }
            | CalibrationNotMonotone
            | AllReplicatesFailed { .. } => 4,
            InvalidOption(_) | InvalidScenario(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
