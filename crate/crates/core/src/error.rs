use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}{}: loss = {loss}", client.map(|c| format!(" (client {c})")).unwrap_or_default())]
    Diverged {
        step: usize,
        loss: f64,
        client: Option<usize>,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Diverged { .. } | Error::Numerical(_) => 3,
            Error::Dimension(_)
            | Error::Format(_)
            | Error::UnsupportedVersion { .. }
            | Error::Io(_) => 4,
        }
    }

    pub(crate) fn with_client(self, id: usize) -> Self {
        match self {
            Error::Diverged { step, loss, .. } => Error::Diverged {
                step,
                loss,
                client: Some(id),
            },
            other => other,
        }
    }
}
