//! Sentence-level sentiment regressors: the GRU model and a bag-of-words
//! ridge baseline.

pub mod gru;
pub mod ridge;
pub mod train;

pub use gru::{Direction, Generation, GruConfig, GruModel, ModelMetadata, Provenance};
pub use ridge::RidgeModel;
pub use train::{
    evaluate, gradient_check, predict_all, train, EpochLog, EvalReport, GradCheckReport, ParamSelection, TrainConfig,
    TrainLog, TrainOutcome,
};
