//! Minimal dense-network engine: layers, softmax cross-entropy with exact
//! gradients, inverted dropout, and the ADAM optimizer.

mod adam;
mod layers;
mod loss;
mod mlp;

pub use adam::{Adam, AdamParams};
pub use layers::{glorot_uniform, DenseLayer, DropoutSpec};
pub use loss::{softmax, softmax_cross_entropy};
pub use mlp::{backward_layers, forward_layers, DropoutMode, LayerGrads, Mlp, Tape};
