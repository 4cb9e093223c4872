use thiserror::Error;

use crate::autodiff::TensorError;
use crate::config::ConfigError;
use crate::hin::GraphError;
use crate::loss::LossError;
use crate::sampler::SampleError;
use crate::synthetic::SpecError;
use crate::train::TrainError;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable lower-case name of the failing subsystem.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Graph(_) => "graph",
            Self::Tensor(_) => "tensor",
            Self::Sample(_) => "sample",
            Self::Loss(_) => "loss",
            Self::Config(_) => "config",
            Self::Spec(_) => "spec",
            Self::Train(_) => "train",
            Self::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
