use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CakeError {
    #[error("DomainError: {0}")]
    Domain(String),
    #[error("ParseError: {0}")]
    Parse(String),
    #[error("QueryPrecondition: {0}")]
    QueryPrecondition(String),
    #[error("ZeroValueResidue: agent {0} values the piece at 0")]
    ZeroValueResidue(u32),
    #[error("StateError: {0}")]
    State(String),
    #[error("ProtocolError: {0}")]
    Protocol(String),
    #[error("IterationBudgetExceeded: {0}")]
    IterationBudgetExceeded(String),
    #[error("PigeonholeFailure: largest isomorphism class has {found} snapshots, {needed} required")]
    PigeonholeFailure { found: usize, needed: usize },
    #[error("ActiveSetExhausted: {0}")]
    ActiveSetExhausted(String),
}

impl CakeError {
    /// Short name used in CLI diagnostics and traces.
    pub fn name(&self) -> &'static str {
        match self {
            CakeError::Domain(_) => "DomainError",
            CakeError::Parse(_) => "ParseError",
            CakeError::QueryPrecondition(_) => "QueryPrecondition",
            CakeError::ZeroValueResidue(_) => "ZeroValueResidue",
            CakeError::State(_) => "StateError",
            CakeError::Protocol(_) => "ProtocolError",
            CakeError::IterationBudgetExceeded(_) => "IterationBudgetExceeded",
            CakeError::PigeonholeFailure { .. } => "PigeonholeFailure",
            CakeError::ActiveSetExhausted(_) => "ActiveSetExhausted",
        }
    }

    pub fn is_input_error(&self) -> bool {
        matches!(self, CakeError::Domain(_) | CakeError::Parse(_))
    }
}

pub type Result<T> = std::result::Result<T, CakeError>;
