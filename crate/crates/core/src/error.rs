use thiserror::Error;

use crate::basis::NodeRef;
use crate::infinite::LadderTrace;
use crate::picard::IterationTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} = {value} is not an integer multiple of dt = {dt}")]
    Alignment {
        field: &'static str,
        value: f64,
        dt: f64,
    },

    #[error("invalid parameter {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("jump thinning invalid: total intensity x dt = {0} must be < 1")]
    InvalidThinning(f64),

    #[error("tree would need {required} nodes, budget is {budget}")]
    NodeBudget { required: String, budget: usize },

    #[error("values missing on layer {layer}: expected {expected}, got {got}")]
    IncompleteLayer {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("invalid node (layer {layer}, index {index})")]
    InvalidNode { layer: usize, index: usize },

    #[error("H-kind segment norm requires a jump measure")]
    MissingMeasure,

    #[error("generator `{name}` returned non-finite value {value} at {node:?}: {inputs}")]
    GeneratorEval {
        name: String,
        value: f64,
        node: Option<NodeRef>,
        inputs: String,
    },

    #[error("processes live on incompatible trees")]
    TreeMismatch,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("problem cannot be reduced to a deterministic mean recursion: {0}")]
    NotReducible(String),

    #[error("Picard iteration did not converge within {} iterations", .0.distances.len())]
    NonConvergence(Box<IterationTrace>),

    #[error("Picard iteration diverged (distances increased {} times in a row)", .0.patience)]
    Divergence(Box<IterationTrace>),

    #[error("truncation ladder exhausted without reaching tolerance")]
    LadderExhausted(Box<LadderTrace>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
