pub mod baseline;
pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod mmvae;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use rng::Rng;
pub use tensor::Tensor;
