//! Dataset generators, the training loop and the evaluation drivers.

pub mod config;
pub mod data;
pub mod eval;
pub mod optim;
pub mod train;

pub use config::TrainConfig;
pub use data::{gen_soft_label_classification, gen_toy_regression, SoftLabelDataset, SoftLabelSpec, ToyRegressionDataset};
pub use eval::{eval_classification_disentangled, eval_regression_disentangled, ClassificationEval, RegressionRow};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use train::{train, train_member, TrainedModel, TrainingData};
