//! Dense f64 arithmetic and the layers the classifier is built from.
//!
//! Every layer records what its backward pass needs in a tape value that is
//! consumed by `backward`, so gradients are produced at most once per forward.

mod activation;
mod adam;
mod dropout;
mod linear;
mod loss;
mod lstm;
mod tensor;

pub use activation::{relu, sigmoid, tanh};
pub use adam::{adam_step, AdamState};
pub use dropout::dropout_mask;
pub use linear::{linear_forward, Linear, LinearTape};
pub use loss::{bce_loss, BceTape, PROB_CLAMP};
pub use lstm::{lstm_forward, LstmParams, LstmTape};
pub use tensor::{axpy, dot, Tensor2};
