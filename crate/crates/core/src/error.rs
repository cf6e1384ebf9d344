use thiserror::Error;

pub type Result<T> = std::result::Result<T, NsktError>;

#[derive(Debug, Error)]
pub enum NsktError {
    #[error("unusable dataset: {0}")]
    EmptyInput(String),

    #[error("duplicate (student, order_key) pairs: {}", format_pairs(.0))]
    DuplicateRecords(Vec<(String, i64)>),

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence of length {0} is too short; at least two interactions are required")]
    SequenceTooShort(usize),

    #[error("query {0} has no derivation under the template")]
    UnderivedQuery(String),

    #[error("cycle detected in grounded graph at node {0}")]
    Cycle(String),

    #[error("unresolved parameter `{0}`")]
    UnresolvedParam(String),

    #[error("parameter `{name}` has shape {actual:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("non-finite loss on sample for student {student} (epoch {epoch})")]
    NonFiniteLoss { student: usize, epoch: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid prediction step {step} for a sequence with {len} interactions")]
    InvalidStep { step: usize, len: usize },

    #[error("unknown student {0}")]
    UnknownStudent(String),

    #[error("unknown format `{0}`")]
    UnknownFormat(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl NsktError {
    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            NsktError::EmptyInput(_) => "empty_input",
            NsktError::DuplicateRecords(_) => "duplicate_records",
            NsktError::Schema { .. } => "schema",
            NsktError::Config(_) => "config",
            NsktError::SequenceTooShort(_) => "sequence_too_short",
            NsktError::UnderivedQuery(_) => "underived_query",
            NsktError::Cycle(_) => "cycle",
            NsktError::UnresolvedParam(_) => "unresolved_param",
            NsktError::ParamShape { .. } => "param_shape",
            NsktError::NonFiniteLoss { .. } => "non_finite_loss",
            NsktError::UndefinedMetric(_) => "undefined_metric",
            NsktError::InvalidStep { .. } => "invalid_step",
            NsktError::UnknownStudent(_) => "unknown_student",
            NsktError::UnknownFormat(_) => "unknown_format",
            NsktError::Parse(_) => "parse",
            NsktError::Io(_) => "io",
            NsktError::Json(_) => "json",
            NsktError::Csv(_) => "csv",
        }
    }
}

fn format_pairs(pairs: &[(String, i64)]) -> String {
    pairs
        .iter()
        .map(|(s, k)| format!("({s}, {k})"))
        .collect::<Vec<_>>()
        .join(", ")
}
