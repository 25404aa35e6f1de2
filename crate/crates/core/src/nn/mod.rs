//! Minimal sequential neural networks with hand-written reverse-mode
//! gradients, Adam, and the VAE loss terms.

pub mod adam;
pub mod layer;
pub mod loss;
pub mod network;
pub mod tensor;

pub use adam::AdamState;
pub use layer::{Activation, Layer, LayerKind, LayerSpec};
pub use loss::{kl_standard_normal, mse, reparameterize, reparameterize_backward, sum_squared};
pub use network::{ForwardCache, Gradients, Sequential};
pub use tensor::Tensor;
