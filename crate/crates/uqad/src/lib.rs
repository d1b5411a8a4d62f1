//! Uncertainty-quality evaluation of probabilistic classifiers via anomaly detection.
//!
//! The pipeline trains candidate classifiers on a subset of classes (In), extracts
//! uncertainty features from their predictions, and scores each candidate by how
//! well a linear anomaly detector fed with those features separates In from Out
//! classes (ROC AUC). Replicated AUCs are then analyzed with a Bayesian ANOVA.
//!
//! Candidate families:
//! - `ML`: maximum-likelihood network (dropout as a train-time regularizer only)
//! - `BD`: Bayesian dropout (dropout kept active at prediction time, MC averaging)
//! - `OSBA`: variational Gaussian network, one weight draw per mini-batch
//! - `SV`: standard variational network, one weight draw per example
//!
//! Modules map onto the pipeline stages: [`data`] (MNIST ingestion, class
//! partitions, leak-free splits), [`nn`] (dense network engine with reverse-mode
//! gradients and ADAM), [`bayes`] (variational layers, KL, ELBO), [`candidates`]
//! (training the four variants), [`uncertainty`] (MC prediction samples and
//! feature extraction), [`detector`] (regularized logistic detector and exact
//! AUC), [`anova`] (hierarchical Bayesian analysis with MCMC), and [`pipeline`] /
//! [`report`] / [`bench`] for orchestration.

pub mod anova;
pub mod bayes;
pub mod bench;
pub mod candidates;
pub mod config;
pub mod data;
pub mod detector;
mod error;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod uncertainty;

pub use error::{Error, Result};
