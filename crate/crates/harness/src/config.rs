//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default except `seed`, which must be given in the file or on the command
//! line. Optional values accept `none`. Unknown keys are errors.

use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use trisleep_core::{FusionMode, MaskPlan, ModelConfig, PretrainConfig, Schedule, TrainConfig};
use trisleep_numcore::Execution;
use trisleep_sync::{Modality, Trimodal};

use crate::data::{Benchmark, PipelineConfig, SplitConfig};
use crate::error::{HarnessError, Result};
use crate::synth::SynthSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Toy,
    Tiny,
    Full,
}

impl Preset {
    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Toy => ModelConfig::toy(),
            Preset::Tiny => ModelConfig::tiny(),
            Preset::Full => ModelConfig::full(),
        }
    }
}

impl Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Toy => "toy",
            Preset::Tiny => "tiny",
            Preset::Full => "full",
        })
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "toy" => Ok(Preset::Toy),
            "tiny" => Ok(Preset::Tiny),
            "full" => Ok(Preset::Full),
            other => Err(format!("unknown preset `{other}` (expected toy, tiny or full)")),
        }
    }
}

/// Where labeled segments come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// Generated families of the synthetic benchmark.
    Synth,
    /// A segment archive written by `trisleep sync`.
    Segments(PathBuf),
}

impl Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synth => f.write_str("synth"),
            DataSource::Segments(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Overrides the preset's layer count in every branch.
    pub layers: Option<usize>,
    pub fusion: FusionMode,
    pub schedule: Schedule,
    pub seed: Option<u64>,
    pub lr: f64,
    pub warmup_frac: f64,
    pub grad_clip: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fixed optimizer step count; replaces `epochs` when set.
    pub steps: Option<usize>,
    /// Pretrained branch checkpoints.
    pub pretrained: Trimodal<Option<PathBuf>>,
    pub data: DataSource,
    pub families: u32,
    pub first_family: u32,
    pub duration_secs: f64,
    pub window_secs: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch_size: usize,
    pub mask_ratio: f64,
    pub span_length: usize,
    /// Unlabeled families used for pretraining, disjoint from the labeled ones.
    pub pretrain_families: u32,
    pub pretrain_first_family: u32,
    pub exec: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mask = MaskPlan::default();
        Self {
            preset: Preset::Toy,
            layers: None,
            fusion: FusionMode::Cross,
            schedule: Schedule::Modulo(4),
            seed: None,
            lr: 1e-4,
            warmup_frac: 0.1,
            grad_clip: Some(1.0),
            epochs: 2,
            batch_size: 16,
            steps: None,
            pretrained: Trimodal::new(None, None, None),
            data: DataSource::Synth,
            families: 12,
            first_family: 0,
            duration_secs: 180.0,
            window_secs: 30.0,
            val_frac: 0.15,
            test_frac: 0.25,
            pretrain_steps: 300,
            pretrain_lr: 1e-4,
            pretrain_batch_size: 8,
            mask_ratio: mask.mask_ratio,
            span_length: mask.span_length,
            pretrain_families: 16,
            pretrain_first_family: 1000,
            exec: Execution::default(),
        }
    }
}

/// Every key, in the order it is written out.
pub const KEYS: [&str; 29] = [
    "preset",
    "layers",
    "fusion",
    "schedule",
    "seed",
    "lr",
    "warmup_frac",
    "grad_clip",
    "epochs",
    "batch_size",
    "steps",
    "pretrained.audio",
    "pretrained.ecg",
    "pretrained.imu",
    "data",
    "families",
    "first_family",
    "duration_secs",
    "window_secs",
    "val_frac",
    "test_frac",
    "pretrain.steps",
    "pretrain.lr",
    "pretrain.batch_size",
    "pretrain.mask_ratio",
    "pretrain.span_length",
    "pretrain.families",
    "pretrain.first_family",
    "exec",
];

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse `{value}`: {e}"))
}

fn parse_opt<T: FromStr>(value: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: Display,
{
    if value == "none" {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

fn show_opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn path_opt(value: &str) -> Option<PathBuf> {
    (value != "none").then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| HarnessError::Config { line: i + 1, detail };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            self.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "preset" => self.preset = parse(value)?,
            "layers" => self.layers = parse_opt(value)?,
            "fusion" => self.fusion = parse(value)?,
            "schedule" => self.schedule = parse(value)?,
            "seed" => self.seed = parse_opt(value)?,
            "lr" => self.lr = parse(value)?,
            "warmup_frac" => self.warmup_frac = parse(value)?,
            "grad_clip" => self.grad_clip = parse_opt(value)?,
            "epochs" => self.epochs = parse(value)?,
            "batch_size" => self.batch_size = parse(value)?,
            "steps" => self.steps = parse_opt(value)?,
            "pretrained.audio" => self.pretrained.audio = path_opt(value),
            "pretrained.ecg" => self.pretrained.ecg = path_opt(value),
            "pretrained.imu" => self.pretrained.imu = path_opt(value),
            "data" => {
                self.data = match value {
                    "synth" => DataSource::Synth,
                    path => DataSource::Segments(PathBuf::from(path)),
                }
            }
            "families" => self.families = parse(value)?,
            "first_family" => self.first_family = parse(value)?,
            "duration_secs" => self.duration_secs = parse(value)?,
            "window_secs" => self.window_secs = parse(value)?,
            "val_frac" => self.val_frac = parse(value)?,
            "test_frac" => self.test_frac = parse(value)?,
            "pretrain.steps" => self.pretrain_steps = parse(value)?,
            "pretrain.lr" => self.pretrain_lr = parse(value)?,
            "pretrain.batch_size" => self.pretrain_batch_size = parse(value)?,
            "pretrain.mask_ratio" => self.mask_ratio = parse(value)?,
            "pretrain.span_length" => self.span_length = parse(value)?,
            "pretrain.families" => self.pretrain_families = parse(value)?,
            "pretrain.first_family" => self.pretrain_first_family = parse(value)?,
            "exec" => {
                self.exec = match value {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    other => return Err(format!("unknown execution `{other}` (expected parallel or sequential)")),
                }
            }
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// The textual value of `key`, as it would be written to a file.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "preset" => self.preset.to_string(),
            "layers" => show_opt(&self.layers),
            "fusion" => self.fusion.to_string(),
            "schedule" => self.schedule.to_string(),
            "seed" => show_opt(&self.seed),
            "lr" => self.lr.to_string(),
            "warmup_frac" => self.warmup_frac.to_string(),
            "grad_clip" => show_opt(&self.grad_clip),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "steps" => show_opt(&self.steps),
            "pretrained.audio" => show_opt(&self.pretrained.audio.as_ref().map(|p| p.display())),
            "pretrained.ecg" => show_opt(&self.pretrained.ecg.as_ref().map(|p| p.display())),
            "pretrained.imu" => show_opt(&self.pretrained.imu.as_ref().map(|p| p.display())),
            "data" => self.data.to_string(),
            "families" => self.families.to_string(),
            "first_family" => self.first_family.to_string(),
            "duration_secs" => self.duration_secs.to_string(),
            "window_secs" => self.window_secs.to_string(),
            "val_frac" => self.val_frac.to_string(),
            "test_frac" => self.test_frac.to_string(),
            "pretrain.steps" => self.pretrain_steps.to_string(),
            "pretrain.lr" => self.pretrain_lr.to_string(),
            "pretrain.batch_size" => self.pretrain_batch_size.to_string(),
            "pretrain.mask_ratio" => self.mask_ratio.to_string(),
            "pretrain.span_length" => self.span_length.to_string(),
            "pretrain.families" => self.pretrain_families.to_string(),
            "pretrain.first_family" => self.pretrain_first_family.to_string(),
            "exec" => match self.exec {
                Execution::Parallel => "parallel".into(),
                Execution::Sequential => "sequential".into(),
            },
            _ => return None,
        })
    }

    /// Canonical text with every key; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed keys are known")))
            .collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| HarnessError::Invalid("a seed is mandatory (set `seed` or pass --seed)".into()))
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut model = self.preset.model().with_mode(self.fusion).with_schedule(self.schedule);
        if let Some(layers) = self.layers {
            for m in Modality::ALL {
                model.branches.get_mut(m).num_layers = layers;
            }
        }
        model
    }

    /// Fine-tuning schedule for `n_train` examples.
    pub fn train_config(&self, n_train: usize) -> Result<TrainConfig> {
        let steps = match self.steps {
            Some(s) => s,
            None => (self.epochs * n_train).div_ceil(self.batch_size.max(1)),
        };
        Ok(TrainConfig {
            steps,
            batch_size: self.batch_size,
            lr: self.lr,
            warmup_frac: self.warmup_frac,
            grad_clip: self.grad_clip,
            seed: self.seed()?,
            exec: self.exec,
        })
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        Ok(PretrainConfig {
            plan: MaskPlan {
                mask_ratio: self.mask_ratio,
                span_length: self.span_length,
            },
            train: TrainConfig {
                steps: self.pretrain_steps,
                batch_size: self.pretrain_batch_size,
                lr: self.pretrain_lr,
                warmup_frac: self.warmup_frac,
                grad_clip: self.grad_clip,
                seed: self.seed()?,
                exec: self.exec,
            },
            ..PretrainConfig::default()
        })
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            window_secs: self.window_secs,
            ..PipelineConfig::default()
        }
    }

    pub fn splits(&self) -> SplitConfig {
        SplitConfig {
            val_frac: self.val_frac,
            test_frac: self.test_frac,
        }
    }

    /// The labeled synthetic benchmark.
    pub fn benchmark(&self) -> Result<Benchmark> {
        Ok(Benchmark {
            spec: SynthSpec {
                seed: self.seed()?,
                duration_secs: self.duration_secs,
                ..SynthSpec::default()
            },
            first_family: self.first_family,
            families: self.families,
            pipeline: self.pipeline(),
        })
    }

    /// The unlabeled pretraining corpus: same generator, other families.
    pub fn pretrain_corpus(&self) -> Result<Benchmark> {
        Ok(Benchmark {
            first_family: self.pretrain_first_family,
            families: self.pretrain_families,
            ..self.benchmark()?
        })
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Invalid(msg));
        self.seed()?;
        self.model_config().validate()?;
        if !(self.lr > 0.0 && self.pretrain_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_size == 0 || self.pretrain_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.steps.is_none() && self.epochs == 0 {
            return bad("epochs must be positive when steps is not set".into());
        }
        if !(self.window_secs > 0.0) {
            return bad("window_secs must be positive".into());
        }
        if self.data == DataSource::Synth && !(self.window_secs <= self.duration_secs) {
            return bad("window_secs exceeds the synthetic recording length".into());
        }
        if self.first_family < self.pretrain_first_family + self.pretrain_families
            && self.pretrain_first_family < self.first_family + self.families
        {
            return bad("pretraining families overlap the labeled families".into());
        }
        for (m, path) in self.pretrained.iter() {
            if let Some(p) = path {
                if !p.is_file() {
                    return bad(format!("pretrained {m} checkpoint {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }
}
