use std::fmt;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag values (exit 1).
    Usage(anyhow::Error),
    /// Unreadable or inconsistent inputs (exit 2).
    Data(anyhow::Error),
    /// Anything else (exit 3).
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError::Usage(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Data(e) | CliError::Internal(e) => {
                if f.alternate() {
                    write!(f, "{e:#}")
                } else {
                    write!(f, "{e}")
                }
            }
        }
    }
}

/// Classify a library error: input problems are data errors, the rest internal.
pub fn classify(e: deeprare::Error) -> CliError {
    use deeprare::Error as E;
    match e {
        E::Fusion(deeprare::FusionError::InvalidConfig(_)) => CliError::Usage(e.into()),
        E::Model(deeprare::ModelError::UnknownTopology(_)) | E::Model(deeprare::ModelError::InvalidTopology(_)) => {
            CliError::Usage(e.into())
        }
        E::Model(deeprare::ModelError::Inference(_)) => CliError::Internal(e.into()),
        E::Model(_) | E::Dataset(_) | E::Image(_) | E::Io(_) | E::Tensor(_) | E::Metric(_) => CliError::Data(e.into()),
        E::Rarity(_) | E::Fusion(_) => CliError::Internal(e.into()),
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait Context<T> {
    fn data(self, what: impl fmt::Display) -> CliResult<T>;
    fn internal(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Context<T> for Result<T, E> {
    fn data(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::Data(e.into().context(what.to_string())))
    }

    fn internal(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::Internal(e.into().context(what.to_string())))
    }
}
