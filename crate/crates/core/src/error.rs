use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The call is not legal in the experiment's current status.
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("experiment `{0}` already exists")]
    DuplicateExperiment(String),

    #[error("experiment `{0}` not found")]
    ExperimentNotFound(String),

    #[error("experiment `{0}` is being modified by another caller")]
    Busy(String),

    #[error("participant `{0}` was already assigned in this experiment")]
    DuplicateParticipant(String),

    #[error("participant `{0}` is not part of the pending batch")]
    UnknownParticipant(String),

    #[error("reward for participant `{0}` supplied more than once")]
    DuplicateReward(String),

    #[error("batch budget of {0} exhausted")]
    BatchBudgetExhausted(u32),

    #[error("{0} assignment record(s) have no resolved reward")]
    UnresolvedRewards(usize),

    #[error("rank-deficient design: {0}")]
    Singular(String),

    #[error("corrupt snapshot: {0}")]
    Snapshot(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Stable machine-readable code for service and CLI responses.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidState(_) => "invalid_state",
            Error::DuplicateExperiment(_) => "duplicate_experiment",
            Error::ExperimentNotFound(_) => "not_found",
            Error::Busy(_) => "busy",
            Error::DuplicateParticipant(_) => "duplicate_participant",
            Error::UnknownParticipant(_) => "unknown_participant",
            Error::DuplicateReward(_) => "duplicate_reward",
            Error::BatchBudgetExhausted(_) => "batch_budget_exhausted",
            Error::UnresolvedRewards(_) => "unresolved_rewards",
            Error::Singular(_) => "singular_design",
            Error::Snapshot(_) => "corrupt_snapshot",
            Error::Malformed(_) => "malformed_input",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
