use std::path::{Path, PathBuf};

use alod_core::Error as CoreError;

/// Errors surfaced by the command line and the service.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file exists but its contents cannot be parsed.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    /// A flag value outside its allowed set.
    #[error("{0}")]
    Usage(String),
    /// Inputs read fine but do not fit together.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Service(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Error class printed as `error[<category>]` with its exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Validation,
    Io,
    Computation,
    Service,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Validation => "validation",
            Category::Io => "io",
            Category::Computation => "computation",
            Category::Service => "service",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Validation => 3,
            Category::Io => 4,
            Category::Computation => 5,
            Category::Service => 6,
        }
    }
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<Path>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.as_ref().to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Core(e) => core_category(e),
            Error::Io { .. } => Category::Io,
            Error::Parse { .. } | Error::Invalid(_) => Category::Validation,
            Error::Usage(_) => Category::Usage,
            Error::Service(_) => Category::Service,
        }
    }

    /// Process exit code. A well-formed flag with a value outside its set
    /// exits like a validation failure; only parse errors of the command
    /// line itself use the usage code.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => Category::Validation.exit_code(),
            e => e.category().exit_code(),
        }
    }

    /// Single-line form `error[category]: message`.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {msg}", self.category().name())
    }
}

fn core_category(e: &CoreError) -> Category {
    match e {
        CoreError::Validation { .. }
        | CoreError::Config(_)
        | CoreError::Domain(_)
        | CoreError::Coverage(_)
        | CoreError::Format(_)
        | CoreError::Build(_)
        | CoreError::Sequencing(_) => Category::Validation,
        CoreError::Calibration(_)
        | CoreError::DegenerateDistance(_)
        | CoreError::Design(_)
        | CoreError::Stability(_)
        | CoreError::Range { .. }
        | CoreError::Analysis(_)
        | CoreError::Comparison(_)
        | CoreError::Normalization(_) => Category::Computation,
    }
}
