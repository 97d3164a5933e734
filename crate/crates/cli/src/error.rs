use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Data(String),

    #[error("no input traces found in {}", .0.display())]
    NoInput(PathBuf),

    #[error("{}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] pnr_core::Error),
}

impl CliError {
    /// 0 success, 2 usage or config, 3 data, 4 numerical non-convergence.
    pub fn exit_code(&self) -> u8 {
        use pnr_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) | CliError::NoInput(_) | CliError::Write { .. } => 3,
            CliError::Core(e) => match e {
                E::NonConvergence { .. } | E::DegenerateFit(_) => 4,
                E::InvalidParameter { .. }
                | E::UnknownPhotonNumber(_)
                | E::PhotonNumberOutOfRange { .. }
                | E::DurationTooShort { .. }
                | E::EventOutsideWindow { .. }
                | E::CutoffOutOfRange { .. }
                | E::InfiniteSnr => 2,
                _ => 3,
            },
        }
    }

    pub fn write(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Write { path, source }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        let core = |e| CliError::Core(e).exit_code();
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(core(pnr_core::Error::InfiniteSnr), 2);
        assert_eq!(core(pnr_core::Error::EmptyInput), 3);
        assert_eq!(CliError::NoInput("d".into()).exit_code(), 3);
        assert_eq!(
            core(pnr_core::Error::NonConvergence {
                iterations: 500,
                residual_norm: 0.1
            }),
            4
        );
        assert_eq!(core(pnr_core::Error::DegenerateFit("x".into())), 4);
    }
}
