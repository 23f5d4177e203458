use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    // ingestion / cohort
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric cell at row {row}, column `{column}`: {value:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("non-positive or non-finite time at row {row}")]
    NonPositiveTime { row: usize },
    #[error("indicator column `{column}` is not 0/1 at row {row}")]
    NonBinaryIndicator { row: usize, column: String },
    #[error("row {row} has {found} covariates, expected {expected}")]
    CovariateDimension {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("subgroup `{0}` matches no subjects")]
    EmptySubgroup(String),
    #[error("invalid subgroup expression `{0}`")]
    InvalidSubgroup(String),
    #[error("only one treatment arm is present")]
    SingleArm,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    // propensity
    #[error("propensity {0} is outside (0, 1)")]
    PropensityOutOfRange(f64),
    #[error("treatment is (quasi-)separated by the covariates")]
    Separation,
    #[error("logistic information matrix is singular")]
    SingularInformation,

    // cox
    #[error("weighted Cox score has no sign change on [{lo}, {hi}]")]
    MonotoneLikelihood { lo: f64, hi: f64 },
    #[error("{solver} did not converge within {max_iter} iterations")]
    MaxIterExceeded {
        solver: &'static str,
        max_iter: usize,
    },
    #[error("empty risk set at event time {0}")]
    EmptyRiskSet(f64),

    // variance
    #[error("Cox information A11 = {0} is degenerate")]
    DegenerateInformation(f64),
    #[error("block of the stacked information matrix is singular")]
    SingularBlock,
    #[error("propensity information U is singular")]
    SingularU,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("confidence level {0} is not in (0, 1)")]
    InvalidLevel(f64),

    // simulation
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("all {0} replications failed")]
    AllReplicationsFailed(usize),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            MissingColumn(_)
            | NonNumericCell { .. }
            | NonPositiveTime { .. }
            | NonBinaryIndicator { .. }
            | CovariateDimension { .. }
            | EmptyCohort
            | EmptySubgroup(_)
            | SingleArm
            | Csv(_)
            | Io(_) => ErrorKind::Data,
            UnknownCovariate(_) | InvalidSubgroup(_) | InvalidLevel(_) | ConfigInvalid(_) => {
                ErrorKind::Config
            }
            _ => ErrorKind::Numerical,
        }
    }

    /// Short machine-readable status token, used in report rows.
    pub fn status(&self) -> &'static str {
        use Error::*;
        match self {
            MonotoneLikelihood { .. } => "monotone-likelihood",
            Separation => "separation",
            SingularInformation | SingularBlock | SingularU => "singular",
            DegenerateInformation(_) => "degenerate-information",
            MaxIterExceeded { .. } => "no-convergence",
            SingleArm => "single-arm",
            EmptySubgroup(_) => "empty-subgroup",
            _ => "error",
        }
    }
}
