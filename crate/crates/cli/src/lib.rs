//! Command implementations behind the `npisim` binary.
//!
//! Every subcommand is a plain function over a typed argument struct so the
//! integration and acceptance suites can drive the harness in-process. Exit
//! codes: 0 ok, 2 usage, 3 I/O, 4 trend/verification failure.

pub mod checks;
pub mod downstream;
pub mod eval;
pub mod gen;
pub mod report;
pub mod train;

pub use downstream::{cmd_downstream, DownstreamArgs};
pub use eval::{cmd_eval, EvalArgs, EvalRow, Method};
pub use gen::{cmd_gen, GenArgs};
pub use report::{cmd_report, ReportArgs};
pub use train::{cmd_train, Phase, TrainArgs};

use npisim_core::Error as CoreError;

/// Harness error carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, unknown names, missing prerequisites: exit 2.
    Usage(String),
    /// Filesystem and serialization problems: exit 3.
    Io(String),
    /// A verification or trend check failed: exit 4.
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Check(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(io) => CliError::Io(io.to_string()),
            CoreError::Format(m) => CliError::Io(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses a comma-separated numeric list.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::Usage(format!("bad {what} entry '{s}'")))
        })
        .collect()
}
