//! Minimal reverse-mode autodiff and the layers used by the box regressor
//! and the classifier.

mod batch;
mod checkpoint;
mod conv;
mod dropout;
pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use batch::epoch_batches;
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use dropout::{dropout_key, DropoutSpec};
pub use graph::{bce_value, Gradients, Graph, Pool, Var, BCE_EPS};
pub use layers::{bilstm_encode, lstm_step, Conv2d, ConvStack, ConvStackConfig, Dense, LstmParams};
pub use optim::{adam_step, AdamState};
pub use params::{glorot_uniform, NamedTensor, ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
