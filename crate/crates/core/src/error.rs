use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Error)]
pub enum GsvieError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("size limit exceeded: {what} = {value} (limit {limit})")]
    SizeLimit {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("numerical blowup in scenario {scenario} at step {step}: value {value}")]
    NumericalBlowup { scenario: u64, step: usize, value: f64 },

    #[error("Picard iteration did not converge after {iterations} iterations (last distance {last:e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("functional `{functional}` failed on scenario {scenario} of control `{control}`: {source}")]
    Functional {
        functional: String,
        control: String,
        scenario: u64,
        #[source]
        source: Box<GsvieError>,
    },
}

impl GsvieError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GsvieError::InvalidArgument(msg.into())
    }

    /// Scenario id attached to a blowup, looking through functional wrappers.
    pub fn blowup_scenario(&self) -> Option<u64> {
        match self {
            GsvieError::NumericalBlowup { scenario, .. } => Some(*scenario),
            GsvieError::Functional { source, .. } => source.blowup_scenario(),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, GsvieError>;
