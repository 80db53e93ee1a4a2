//! Anomaly classifier: a from-scratch single-hidden-layer backpropagation
//! network over normalized vitals, with training, evaluation and the
//! input-count study.

pub mod dataset;
mod features;
mod mlp;
pub mod study;
mod train;

use thiserror::Error;

pub use dataset::{LabeledSample, LabeledSet};
pub use features::{normalize, FeatureVector};
pub use mlp::{init_model, sigmoid, state_for, Gradients, MlpModel, DEFAULT_HIDDEN, DEFAULT_INIT_SCALE};
pub use study::{input_study, reference_model, StudyConfig, StudyReport};
pub use train::{evaluate, train, Confusion, Evaluation, Hyperparams, TrainReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("input has {got} features, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("the network takes 3 or 4 inputs, not {0}")]
    InputCount(usize),
    #[error("feature value {0} outside [0, 1]")]
    FeatureRange(f64),
    #[error("model shape: {0}")]
    Shape(String),
    #[error("model contains non-finite weights")]
    NonFinite,
    #[error("invalid hyperparameter: {0}")]
    Hyperparam(&'static str),
    #[error("labeled set is empty")]
    EmptySet,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Io(e.to_string())
    }
}
