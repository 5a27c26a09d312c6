use thiserror::Error;

use crate::env::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("E[N]={0} not supercritical")]
    NotSupercritical(f64),

    #[error("non-finite moment estimate: {0}")]
    NonFiniteMoment(String),

    #[error("population cap of {cap} nodes exceeded")]
    PopulationCap { cap: usize },

    #[error("node {0} does not exist")]
    UnknownNode(NodeId),

    #[error("node {0} is not realized and the environment has no law to grow it")]
    NoLaw(NodeId),

    #[error("singular absorption system: {0}")]
    SingularSystem(String),

    #[error("step cap breached after {steps} steps")]
    StepCap { steps: u64 },

    #[error("zero accepted samples out of {attempts} attempts ({reason})")]
    NoAcceptedSamples { attempts: u64, reason: String },

    #[error("unsupported law: {0}")]
    UnsupportedLaw(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
