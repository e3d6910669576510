//! Small dense networks and their optimizer.

mod adamw;
mod mlp;
mod schedule;

pub use adamw::{AdamW, AdamWConfig};
pub use mlp::{Activation, BoundMlp, Layer, Mlp};
pub use schedule::LrSchedule;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Anything that owns trainable tensors in a fixed declaration order.
pub trait Module {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Places every parameter on `g`, tracked or not, in declaration order.
    fn bind_params(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }
}
