//! Generative-contrastive self-supervised learning on heterogeneous graphs.

pub mod autodiff;
pub mod check;
pub mod config;
pub mod error;
pub mod export;
pub mod fmat;
pub mod hin;
pub mod loss;
pub mod mae;
pub mod rng;
pub mod sampler;
pub mod schema;
pub mod sparse;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
