//! Minimal neural-network substrate for small fixed recurrent, attention and
//! convolutional topologies.
//!
//! Layers operate on batches and return a cache from `forward`; `backward` consumes
//! that cache, accumulates parameter gradients in each parameter's grad slot and
//! returns the gradient with respect to the layer input. Everything is `f64`.

pub mod activation;
pub mod adam;
pub mod attention;
pub mod bundle;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod error;
pub mod gradcheck;
pub mod gru;
pub mod init;
mod linalg;
pub mod loss;
pub mod lstm;
pub mod tensor;

pub use activation::{apply_activation, apply_leaky_relu, sigmoid, Activation, LEAKY_RELU_SLOPE};
pub use adam::{adam_step, Adam};
pub use attention::{attention_forward, softmax, Attention, AttentionCache, AttentionSpec};
pub use bundle::{EncodedTensor, ModelBundle};
pub use conv::{
    conv1d_forward, conv1d_transpose_forward, conv_output_len, conv_transpose_output_len, Conv1d,
    Conv1dCache, Conv1dSpec,
};
pub use dense::{Dense, DenseCache, DenseSpec};
pub use dropout::{dropout_forward, DropoutMask};
pub use error::{NnError, Result};
pub use gru::{gru_forward, gru_step, Gru, GruCache, GruSpec};
pub use init::{seeded_rng, SeededRng};
pub use loss::{loss, Loss, BCE_EPS};
pub use lstm::{lstm_step, Lstm, LstmCache, LstmSpec};
pub use tensor::Tensor;

/// Anything that owns trainable tensors.
///
/// `parameters` and `parameters_mut` must list tensors in the same order.
pub trait Parameterized {
    fn parameters(&self) -> Vec<(String, &Tensor)>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }
}
