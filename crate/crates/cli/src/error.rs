use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] matmuon::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0} acceptance criteria failed")]
    CheckFailed(usize),
}

impl CliError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for numerical
    /// failures, 4 for failed acceptance checks, 1 for i/o.
    pub fn exit_code(&self) -> i32 {
        use matmuon::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                E::InvalidMatrix(_)
                | E::Shape { .. }
                | E::InvalidInput(_)
                | E::UnsupportedMode(_)
                | E::InsufficientData(_)
                | E::PreconditionUnchecked => 2,
                E::SvdNoConverge { .. } | E::ZeroInput | E::DivergenceDetected(_) | E::DegenerateSpectrum(_) => 3,
            },
            CliError::Io { .. } => 1,
            CliError::CheckFailed(_) => 4,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
