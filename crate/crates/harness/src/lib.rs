//! Experiment plumbing: synthetic data, the preprocessing pipeline, config
//! files, checkpoints and the fine-tuning, pretraining and ablation drivers.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod synth;

pub use ablation::{run_ablation, suite_configs, AblationTable, Cell, CellStatus, Suite, PRETRAINING_ROWS};
pub use checkpoint::Checkpoint;
pub use config::{DataSource, ExperimentConfig, Preset, KEYS};
pub use data::{prepare, prepare_recording, split, Benchmark, PipelineConfig, SplitConfig, Splits, INPUT_RATES};
pub use error::{HarnessError, Result};
pub use experiment::{
    code_version, load_data, load_model, load_pretrained, run_eval, run_finetune, run_gradcheck, run_pretrain,
    save_pretrained, FinetuneOutcome, GRADCHECK_INPUT,
};
pub use synth::{synth_generate, Bursts, Recording, SynthSpec, NATIVE_RATES};
