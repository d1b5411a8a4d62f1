//! Variational Gaussian layers, the KL regularizer, the ELBO objective with
//! per-minibatch (OSBA) and per-example (SV) weight sampling, and MC-dropout
//! prediction.

mod elbo;
mod variational;

pub use elbo::{elbo_loss, VarGrads, VarLayerGrads};
pub use variational::{
    kl_gaussian, mc_dropout_predict, sigmoid, softplus, SampledLayer, SamplingStrategy, VarMlp,
    VariationalDense,
};
