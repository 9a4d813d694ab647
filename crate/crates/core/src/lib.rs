//! Aleatoric/epistemic uncertainty disentanglement for stochastic neural
//! networks.
//!
//! A small `f64` tensor library with reverse-mode autodiff backs dense
//! networks with Gaussian output heads. Four ways of producing a
//! distribution of predictions are supported (MC-Dropout, MC-DropConnect,
//! Flipout and deep ensembles), next to a deterministic baseline. Their
//! samples are split into aleatoric and epistemic parts; for classification
//! the split happens on the logits and the sampling softmax maps each part
//! back to probabilities.
//!
//! ```
//! use uqd::disentangle::disentangle_regression;
//! use uqd::uq::RegressionSamples;
//!
//! let s = RegressionSamples { means: vec![1.0, 3.0], variances: vec![0.5, 1.5] };
//! let d = disentangle_regression(&s).unwrap();
//! assert_eq!(d.aleatoric_variance, 1.0);
//! assert_eq!(d.epistemic_variance, 1.0);
//! assert_eq!(d.predictive_variance, 2.0);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod calibration;
pub mod disentangle;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod model_io;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod uq;

pub use autodiff::{Gradients, Tape, Var};
pub use disentangle::{
    classification_uncertainty, combine_gaussian_mixture, decompose_variance, disentangle_logits,
    disentangle_regression, entropy, sampling_softmax, ClassificationDisentangled, RegressionDisentangled,
    SamplingSoftmaxConfig,
};
pub use error::{Error, Result};
pub use losses::LossConfig;
pub use nn::{Mode, Network, Task};
pub use rng::RngStream;
pub use tensor::Tensor;
pub use uq::{sample_predictions, LogitSamples, PredictionSamples, RegressionSamples, UqKind, UqMethodConfig, UqModel};
