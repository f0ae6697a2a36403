use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] pagkit::Error),
    #[error("b-required (supply table or run estimate-b): {0}")]
    MissingB(String),
    #[error("{0} bound violation(s) detected")]
    Violations(usize),
    #[error("{0} trial(s) failed to reach a periodic steady state")]
    Failures(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 model invalid, 3 missing prerequisite, 4 bound violation, 5 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use pagkit::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Model(e) => match e {
                E::Dimension(_)
                | E::InvalidArgument(_)
                | E::NotHurwitz(_)
                | E::InvalidBound(_)
                | E::StructureMismatch(_)
                | E::Empty => 2,
                _ => 5,
            },
            CliError::MissingB(_) => 3,
            CliError::Violations(_) => 4,
            CliError::Failures(_) => 5,
            CliError::Io(_) => 1,
        }
    }
}
