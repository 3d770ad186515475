use std::fmt;
use std::path::Path;

/// Shell-facing failure classes. The exit code split is a scripting
/// contract: 2 means the invocation was wrong (flags, files, shapes),
/// 3 means the numerics went bad (divergence, NaN loss).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<awp_core::Error> for CliError {
    fn from(e: awp_core::Error) -> Self {
        match e {
            awp_core::Error::Training { .. } | awp_core::Error::Attack { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attach the file path to errors from loaders; a bare "No such file or
/// directory" without the path is useless in a sweep log.
pub fn at_path<T>(r: awp_core::Result<T>, path: &Path) -> CliResult<T> {
    r.map_err(|e| match e {
        awp_core::Error::Training { .. } | awp_core::Error::Attack { .. } => {
            CliError::Numeric(format!("{}: {}", path.display(), e))
        }
        other => CliError::Usage(format!("{}: {}", path.display(), other)),
    })
}
