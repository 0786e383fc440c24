//! Weakly supervised instance segmentation over proposal pools.
//!
//! Two distributions are trained jointly: a noise-conditioned conditional
//! distribution that only produces labelings consistent with the weak
//! annotation, and an annotation-agnostic prediction distribution used at
//! test time.

pub mod checkpoint;
pub mod condnet;
pub mod config;
pub mod disco;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod pool;
pub mod prednet;
pub mod rng;
pub mod scorer;
pub mod synthgen;
pub mod train;

pub use checkpoint::{load_model, save_model, Checkpoint};
pub use condnet::{InferenceConfig, InstanceLabeling, SamplerConfig, TermMode};
pub use config::{DataConfig, PathsConfig, RunConfig};
pub use disco::DiscoConfig;
pub use error::{Error, Result};
pub use eval::{AblationTable, DecodeConfig, EvalResult, Pointwise};
pub use geometry::{
    box_iou, build_adjacency, build_adjacency_with, mask_iou, overlap_fraction, tight_box, Adjacency, BBox,
    EdgeAggregation, EdgeMap, PixelMask,
};
pub use loss::LossConfig;
pub use pool::{OverlapRule, PoolContext};
pub use prednet::{InstancePrediction, PredParams, PredictiveState};
pub use scorer::{CondParams, FeatureVector, NoiseConfig, NoiseVector, ScoreTable, ScorerConfig};
pub use synthgen::{Annotation, ClassBox, GroundTruthInstance, Image, LabeledMask, SceneRecord, SeedMask};
pub use train::{fit, FitConfig, FitResult, TrainConfig};
