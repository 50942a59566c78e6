use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum AftError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    Csv(#[from] CsvError),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("active set of size {active} exceeds the {rows} available rows")]
    OverdeterminedSupport { active: usize, rows: usize },

    #[error("cross-validation fold {fold} has no events in its {part} split")]
    FoldDegenerate { fold: usize, part: &'static str },

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("relative error is undefined when the true coefficient vector is zero")]
    UndefinedMetric,

    #[error(
        "theory diagnostics infeasible: C({p}, {subset}) column subsets exceed the enumeration limit of {limit}; use a smaller p or T"
    )]
    DiagnosticsInfeasible { p: usize, subset: usize, limit: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Dataset CSV problems, each carrying file coordinates where they exist.
/// Rows are 1-based data rows (the header is not counted).
#[derive(Debug, Error)]
pub enum CsvError {
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),

    #[error("header has both `time` and `logtime`; keep exactly one")]
    AmbiguousTime,

    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),

    #[error("row {row}, column `{column}`: cannot parse {value:?} as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: value {value:?} is not finite")]
    NonFinite {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: status must be 0 or 1, found {value:?}")]
    InvalidStatus {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: time must be positive, found {value:?}")]
    NonPositiveTime {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("malformed csv: {0}")]
    Parse(#[from] csv::Error),
}

impl AftError {
    /// Process exit code for this failure category.
    pub fn exit_code(&self) -> i32 {
        match self {
            AftError::InvalidConfig(_) => 1,
            AftError::InvalidInput(_)
            | AftError::Csv(_)
            | AftError::UndefinedMetric
            | AftError::Io(_)
            | AftError::Json(_) => 2,
            AftError::DegenerateDesign(_)
            | AftError::OverdeterminedSupport { .. }
            | AftError::FoldDegenerate { .. }
            | AftError::Calibration(_) => 3,
            AftError::DiagnosticsInfeasible { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, AftError>;
