//! Three-branch (audio, ECG, IMU) transformer for sleep/wake classification
//! with cross-attention fusion, fusion baselines, span-mask pretraining and
//! evaluation metrics.

pub mod config;
pub mod encoder;
pub mod error;
pub mod features;
pub mod fusion;
pub mod layers;
pub mod metrics;
pub mod pretrain;
pub mod train;

pub use config::{BranchConfig, ConvExtractorConfig, FusionMode, ModelConfig, Schedule};
pub use encoder::{Branch, TransformerLayer};
pub use error::{CoreError, Result};
pub use features::{positional_encoding, ConvExtractor, Frontend, ImuProjection};
pub use fusion::{copy_matching, mean_pool, ClassifierHead, CrossKv, Forward, Heads, Model, Network};
pub use metrics::{confusion, report, ConfusionMatrix, MetricsReport};
pub use pretrain::{normalize_targets, pretrain_branch, reconstruction_target, span_mask, MaskPlan, PretrainConfig, PretrainNet, PretrainOutcome};
pub use train::{evaluate, fit, predict_logits, train, BatchSampler, Example, TrainConfig, TrainHistory};
