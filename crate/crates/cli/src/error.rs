use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {artifact}; run `kerm {command}` first")]
    MissingArtifact { artifact: String, command: &'static str },

    #[error("{0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] kerm::Error),
}

impl CliError {
    /// 0 success, 1 validation, 2 data, 3 internal invariant.
    pub fn exit_code(&self) -> i32 {
        use kerm::Error as E;
        match self {
            CliError::Config(_) | CliError::MissingArtifact { .. } => 1,
            CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                E::Config(_) => 1,
                E::Parse { .. }
                | E::UnmappedRelation(_)
                | E::Lookup { .. }
                | E::NonPositiveReliability(_)
                | E::Input(_)
                | E::Diverged { .. }
                | E::Io { .. }
                | E::Json(_) => 2,
                E::Shape { .. } | E::NonDeterministic { .. } | E::Invariant(_) => 3,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
