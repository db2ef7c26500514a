use std::path::PathBuf;

use sdelab::Error;

/// Exit codes, one per failing layer. Listed in `--help`.
pub const EXIT_CODES: &str = "\
Exit codes:
  0   success
  1   I/O error writing outputs
  2   usage error (bad flag, missing input)
  3   model text does not parse
  4   malformed parameter list
  5   data or config file rejected
  6   simulation or expression evaluation failed
  7   calibration failed
  8   metrics or symbolic-graph computation failed
  9   risk computation failed
  10  discovery loop failed
  11  agent or LLM transport error
  12  trading rule or accounting error
  13  backtest error, or the backtest finished with status failed
  14  benchmark error";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("backtest finished with status failed: {0}")]
    RunFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::RunFailed(_) => 13,
            CliError::Core(e) => match e {
                Error::Parse(_) => 3,
                Error::Params(_) => 4,
                Error::Data(_) => 5,
                Error::Sim(_) | Error::Eval(_) => 6,
                Error::Calib(_) => 7,
                Error::Metrics(_) | Error::Graph(_) => 8,
                Error::Risk(_) => 9,
                Error::Discovery(_) => 10,
                Error::Agent(_) => 11,
                Error::Trading(_) => 12,
                Error::Backtest(_) => 13,
                Error::Bench(_) => 14,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

/// Lifts any module error into [`CliError::Core`].
pub fn core<E: Into<Error>>(e: E) -> CliError {
    CliError::Core(e.into())
}
