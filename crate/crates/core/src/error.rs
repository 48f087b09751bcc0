use thiserror::Error;

/// Errors raised by the data layer and the estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EconError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("file is empty")]
    EmptyFile,
    #[error("i/o error: {0}")]
    Io(String),

    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("column '{0}' already exists")]
    NameCollision(String),
    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),
    #[error("column '{column}' has {got} values, expected {expected}")]
    LengthMismatch { column: String, expected: usize, got: usize },
    #[error("transform '{transform}' needs {expected} source column(s), got {got}")]
    ArityMismatch { transform: String, expected: usize, got: usize },
    #[error("column '{column}' has {levels} distinct levels (limit {limit})")]
    TooManyLevels { column: String, levels: usize, limit: usize },
    #[error("column '{0}' is continuous; only categorical or integer-valued columns can be encoded")]
    NonCategoricalColumn(String),
    #[error("column '{0}' is not numeric")]
    NonNumericColumn(String),
    #[error("no rows match the reference subset {column} = {value}")]
    EmptyReferenceSubset { column: String, value: String },

    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("too few complete rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("fixed-effect factor '{0}' has a single level")]
    DegenerateFactor(String),
    #[error("regressor '{0}' has no variation after absorbing fixed effects")]
    NoVariationAfterDemeaning(String),
    #[error("perfect separation detected (coefficient on '{0}' diverged)")]
    Separation(String),
    #[error("outcome '{0}' is not binary (0/1)")]
    NonBinaryOutcome(String),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    #[error("trimming removed every observation")]
    AllTrimmed,
    #[error("{0} group is empty")]
    EmptyGroup(String),
    #[error("under-identified: {instruments} instrument(s) for {endogenous} endogenous regressor(s)")]
    UnderIdentified { instruments: usize, endogenous: usize },
    #[error("no treated units: adoption column '{0}' is missing for every row")]
    NoTreatedUnits(String),
    #[error("insufficient support on the {side} side of the cutoff: {got} observation(s) in the window, need {needed}")]
    InsufficientSupport { side: String, got: usize, needed: usize },
    #[error("bandwidth must be positive, got {0}")]
    BandwidthNonpositive(f64),
    #[error("first-stage jump in treatment at the cutoff is zero ({0:e})")]
    ZeroFirstStage(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, EconError>;
