use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A samples or predictions file row failed validation.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid samples: {0}")]
    InvalidSamples(String),

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("patient {patient} has {found} images, at least {required} are required")]
    TooFewImages {
        patient: String,
        found: usize,
        required: usize,
    },

    #[error("roc_auc: degenerate input: {0}")]
    DegenerateInput(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("backward pass without a training-mode forward cache")]
    MissingCache,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) | Error::File { .. } => true,
            Error::Csv(e) => e.is_io_error(),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
