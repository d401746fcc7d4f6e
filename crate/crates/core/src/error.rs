use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A matrix that had to be inverted was singular or too ill-conditioned.
    /// `pattern` is the 0-based spatial pattern index when raised while
    /// designing a per-pattern baseband precoder.
    #[error("singular matrix ({context}, condition number {condition:.3e}){}", pattern_suffix(.pattern))]
    Singular {
        context: &'static str,
        condition: f64,
        pattern: Option<usize>,
    },

    #[error("degenerate retraction at entry {entry} after {attempts} step halvings")]
    DegenerateRetraction { entry: usize, attempts: usize },

    #[error("shape mismatch in {layer}: expected {expected}, got {actual}")]
    Shape {
        layer: String,
        expected: usize,
        actual: usize,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn pattern_suffix(pattern: &Option<usize>) -> String {
    match pattern {
        Some(p) => format!(" in spatial pattern {p}"),
        None => String::new(),
    }
}

impl Error {
    /// Process exit code for the command-line front end: 2 for configuration
    /// problems, 3 for numeric or runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn with_pattern(self, index: usize) -> Self {
        match self {
            Error::Singular {
                context, condition, ..
            } => Error::Singular {
                context,
                condition,
                pattern: Some(index),
            },
            other => other,
        }
    }
}
