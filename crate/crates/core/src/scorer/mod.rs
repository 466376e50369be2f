//! Per-pixel scorer: fixed features feeding linear class, confidence and
//! box-regression heads.

pub mod features;
pub mod loss;
pub mod model;
pub mod train;

pub use features::{extract_features, NUM_BASE_FEATURES, RECEPTIVE_RADIUS};
pub use loss::{azn_loss, part_loss, AznLoss};
pub use model::{HeadOutputs, ScorerParams, Stage};
pub use train::{sgd_train, Sgd, TrainConfig, TrainOutcome, TrainSample};
