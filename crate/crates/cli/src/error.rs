use quadretarget::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    /// Reading or writing a file.
    #[error("{stage} {}", with_path(path, source))]
    Io {
        stage: &'static str,
        path: String,
        source: Error,
    },
    /// A pipeline stage failed on valid inputs.
    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Error },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn stage(stage: &'static str) -> impl FnOnce(Error) -> Self {
        move |source| Self::Stage { stage, source }
    }

    pub fn io(stage: &'static str, path: &std::path::Path) -> impl FnOnce(Error) -> Self {
        let path = path.display().to_string();
        move |source| Self::Io { stage, path, source }
    }

    /// 1 for algorithmic failures, 2 for I/O and configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } => 2,
            Self::Stage { source, .. } => match source {
                Error::Io { .. } | Error::Parse { .. } => 2,
                _ => 1,
            },
        }
    }
}

fn with_path(path: &str, source: &Error) -> String {
    match source {
        // Already names the file.
        Error::Io { .. } => source.to_string(),
        _ => format!("{path}: {source}"),
    }
}
