pub mod cli;
pub mod data;
pub mod diag;
pub mod error;
pub mod lap;
pub mod matching;
pub mod nn;
pub mod prune;
pub mod renorm;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use nn::{ArchDescriptor, Layer, LayerDesc, ModelGraph, Mode, Phase};
pub use tensor::Tensor;
