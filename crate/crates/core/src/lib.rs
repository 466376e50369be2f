//! Scale-adaptive hierarchical part segmentation.
//!
//! The pipeline scores parts on the whole image, regresses object boxes from
//! every pixel, zooms each confident object to a canonical scale and
//! re-scores it, then repeats the same zoom-and-rescore step for individual
//! parts. Scores from overlapping regions are merged by proposal confidence.
//!
//! Module map:
//!
//! - [`grid`]: dense grids, label maps, boxes, resampling.
//! - [`synth`]: articulated-figure scene generator.
//! - [`sen`]: box-regression targets, loss, decoding and suppression.
//! - [`scorer`]: fixed filter-bank features, linear heads, SGD training.
//! - [`zoom`]: zoom ratios and region zooming with exact inverse mapping.
//! - [`cascade`]: the three-stage hierarchy and score merging.
//! - [`metrics`]: mIOU, size-binned mIOU, instance-wise part AP.
//! - [`experiment`]: end-to-end training and method comparison.

pub mod cascade;
pub mod config;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod scorer;
pub mod sen;
pub mod synth;
pub mod zoom;

pub use cascade::{CascadeConfig, StageModels, StageOutput};
pub use error::{HaznError, Result};
pub use grid::{AbsBox, Grid2D, LabelMap, ScoreMap};
pub use metrics::{EvalReport, SizeBin};
pub use scorer::{ScorerParams, TrainConfig};
pub use sen::{Level, RoiProposal, SenLossConfig, SenTargets};
pub use synth::{PartClass, SceneConfig, SceneSample, NUM_CLASSES};
pub use zoom::{ZoomConfig, ZoomedRegion};
