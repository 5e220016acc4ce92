use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] vrlm_core::Error),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 1 config or setup error, 2 divergence, 3 oracle failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(vrlm_core::Error::Diverged { .. }) => 2,
            HarnessError::Core(vrlm_core::Error::OracleFailure { .. }) => 3,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
