//! Model hyperparameters and the named presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use trisleep_numcore::conv_output_len;
use trisleep_sync::{Modality, Trimodal};

use crate::error::{CoreError, Result};

/// Convolutional front end for waveform branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvExtractorConfig {
    pub channels: usize,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl ConvExtractorConfig {
    pub fn full() -> Self {
        Self {
            channels: 512,
            kernels: vec![10, 3, 3, 3, 3, 2, 2],
            strides: vec![5, 2, 2, 2, 2, 2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() || self.kernels.len() != self.strides.len() {
            return Err(CoreError::Config(format!(
                "conv extractor needs equally many kernels and strides, got {} and {}",
                self.kernels.len(),
                self.strides.len()
            )));
        }
        if self.channels == 0 || self.kernels.contains(&0) || self.strides.contains(&0) {
            return Err(CoreError::Config("conv channels, kernels and strides must be positive".into()));
        }
        Ok(())
    }

    /// Frames produced from `t` input samples, `None` if `t` is too short.
    pub fn output_len(&self, t: usize) -> Option<usize> {
        self.kernels
            .iter()
            .zip(&self.strides)
            .try_fold(t, |len, (&k, &s)| conv_output_len(len, k, s))
    }

    /// Input samples seen by one output frame.
    pub fn receptive_field(&self) -> usize {
        self.kernels
            .iter()
            .zip(&self.strides)
            .rev()
            .fold(1, |rf, (&k, &s)| (rf - 1) * s + k)
    }

    /// Input samples between consecutive output frames.
    pub fn hop(&self) -> usize {
        self.strides.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub modality: Modality,
    pub num_layers: usize,
    /// Embedding width `L_e`.
    pub hidden: usize,
    pub num_heads: usize,
    pub intermediate: usize,
    pub dropout: f64,
    /// Present for audio and ECG, absent for the IMU's linear front end.
    pub conv: Option<ConvExtractorConfig>,
}

impl BranchConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.modality;
        if self.num_layers == 0 {
            return Err(CoreError::Config(format!("{m}: num_layers must be at least 1")));
        }
        if self.hidden == 0 || self.num_heads == 0 || !self.hidden.is_multiple_of(self.num_heads) {
            return Err(CoreError::Config(format!(
                "{m}: hidden size {} is not divisible by {} heads",
                self.hidden, self.num_heads
            )));
        }
        if self.intermediate == 0 {
            return Err(CoreError::Config(format!("{m}: intermediate size must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("{m}: dropout {} outside [0, 1)", self.dropout)));
        }
        match (m, &self.conv) {
            (Modality::Imu, Some(_)) => Err(CoreError::Config("imu branch takes no conv extractor".into())),
            (Modality::Imu, None) => Ok(()),
            (_, Some(c)) => c.validate(),
            (_, None) => Err(CoreError::Config(format!("{m} branch needs a conv extractor"))),
        }
    }

    /// Frames the front end emits for `samples` input samples.
    pub fn frames(&self, samples: usize) -> Option<usize> {
        match &self.conv {
            Some(c) => c.output_len(samples),
            None => (samples > 0).then_some(samples),
        }
    }
}

/// Which layers attend across branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Schedule {
    None,
    /// Layers with `i % n == 1`.
    Modulo(usize),
    /// Layers in `start..end`.
    Range(usize, usize),
}

impl Schedule {
    pub const PRESETS: [&'static str; 7] = ["none", "mod2", "mod4", "mod6", "first4", "mid4", "last4"];

    pub fn is_cross(&self, layer: usize) -> bool {
        match *self {
            Schedule::None => false,
            Schedule::Modulo(n) => layer % n == 1,
            Schedule::Range(a, b) => (a..b).contains(&layer),
        }
    }

    pub fn cross_layers(&self, num_layers: usize) -> Vec<usize> {
        (0..num_layers).filter(|&i| self.is_cross(i)).collect()
    }

    /// Range schedules must fit inside the layer stack.
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        match *self {
            Schedule::Range(a, b) if a >= b || b > num_layers => Err(CoreError::Config(format!(
                "schedule {self} needs layers {a}..{b} but the branches have {num_layers}"
            ))),
            Schedule::Modulo(0) => Err(CoreError::Config("modulo schedule with period 0".into())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Schedule::None => f.write_str("none"),
            Schedule::Modulo(n) => write!(f, "mod{n}"),
            Schedule::Range(0, 4) => f.write_str("first4"),
            Schedule::Range(4, 8) => f.write_str("mid4"),
            Schedule::Range(8, 12) => f.write_str("last4"),
            Schedule::Range(a, b) => write!(f, "range{a}-{b}"),
        }
    }
}

impl FromStr for Schedule {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Schedule::None,
            "mod2" => Schedule::Modulo(2),
            "mod4" => Schedule::Modulo(4),
            "mod6" => Schedule::Modulo(6),
            "first4" => Schedule::Range(0, 4),
            "mid4" => Schedule::Range(4, 8),
            "last4" => Schedule::Range(8, 12),
            other => {
                return Err(CoreError::Config(format!(
                    "unknown schedule `{other}` (expected one of {})",
                    Schedule::PRESETS.join(", ")
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionMode {
    /// Pooled front-end features, no transformer layers.
    Early,
    /// Independent branches with their own heads; logits averaged.
    Late,
    /// Lockstep branches exchanging keys/values on scheduled layers.
    Cross,
    /// One branch alone.
    Single(Modality),
}

impl FusionMode {
    pub fn uses(&self, m: Modality) -> bool {
        match self {
            FusionMode::Single(only) => *only == m,
            _ => true,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::Early => f.write_str("early"),
            FusionMode::Late => f.write_str("late"),
            FusionMode::Cross => f.write_str("cross"),
            FusionMode::Single(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for FusionMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(FusionMode::Early),
            "late" => Ok(FusionMode::Late),
            "cross" => Ok(FusionMode::Cross),
            other => other.parse::<Modality>().map(FusionMode::Single).map_err(|_| {
                CoreError::Config(format!("unknown fusion mode `{other}` (expected early, late, cross, audio, ecg or imu)"))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub branches: Trimodal<BranchConfig>,
    pub mode: FusionMode,
    pub schedule: Schedule,
    /// Dropout between the head's second and third linear layers.
    pub head_dropout: f64,
    /// Scale attention logits by `1/sqrt(L_e / heads)` instead of `1/sqrt(L_e)`.
    pub conventional_scale: bool,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    pub fn full() -> Self {
        let wave = |modality| BranchConfig {
            modality,
            num_layers: 12,
            hidden: 768,
            num_heads: 16,
            intermediate: 3072,
            dropout: 0.1,
            conv: Some(ConvExtractorConfig::full()),
        };
        Self {
            branches: Trimodal::new(
                wave(Modality::Audio),
                wave(Modality::Ecg),
                BranchConfig {
                    modality: Modality::Imu,
                    num_layers: 12,
                    hidden: 72,
                    num_heads: 4,
                    intermediate: 144,
                    dropout: 0.1,
                    conv: None,
                },
            ),
            mode: FusionMode::Cross,
            schedule: Schedule::Modulo(4),
            head_dropout: 0.1,
            conventional_scale: false,
            layer_norm_eps: 1e-5,
        }
    }

    /// Desk-scale preset: 2 layers, `L_e` 16/16/8, narrow conv stack.
    pub fn toy() -> Self {
        let wave = |modality| BranchConfig {
            modality,
            num_layers: 2,
            hidden: 16,
            num_heads: 2,
            intermediate: 32,
            dropout: 0.1,
            conv: Some(ConvExtractorConfig {
                channels: 8,
                ..ConvExtractorConfig::full()
            }),
        };
        Self {
            branches: Trimodal::new(
                wave(Modality::Audio),
                wave(Modality::Ecg),
                BranchConfig {
                    modality: Modality::Imu,
                    num_layers: 2,
                    hidden: 8,
                    num_heads: 2,
                    intermediate: 16,
                    dropout: 0.1,
                    conv: None,
                },
            ),
            mode: FusionMode::Cross,
            schedule: Schedule::Modulo(4),
            head_dropout: 0.1,
            conventional_scale: false,
            layer_norm_eps: 1e-5,
        }
    }

    /// Gradient-check preset: the toy model with dropout off and a 16-channel conv stack.
    pub fn tiny() -> Self {
        let mut cfg = Self::toy();
        for m in Modality::ALL {
            let b = cfg.branches.get_mut(m);
            b.dropout = 0.0;
            if let Some(conv) = b.conv.as_mut() {
                conv.channels = 16;
            }
        }
        cfg.head_dropout = 0.0;
        cfg
    }

    pub fn with_mode(mut self, mode: FusionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn branch(&self, m: Modality) -> &BranchConfig {
        self.branches.get(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (m, b) in self.branches.iter() {
            if b.modality != m {
                return Err(CoreError::Config(format!("branch slot {m} holds a {} config", b.modality)));
            }
            b.validate()?;
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(CoreError::Config(format!("head dropout {} outside [0, 1)", self.head_dropout)));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(CoreError::Config("layer norm epsilon must be positive".into()));
        }
        if self.mode == FusionMode::Cross {
            let layers = self.branches.audio.num_layers;
            if self.branches.iter().any(|(_, b)| b.num_layers != layers) {
                return Err(CoreError::Config("cross fusion needs equally deep branches".into()));
            }
            self.schedule.validate(layers)?;
        }
        Ok(())
    }

    /// Width of the classifier input for the active mode.
    pub fn pooled_width(&self) -> usize {
        match self.mode {
            FusionMode::Single(m) => self.branch(m).hidden,
            _ => self.branches.iter().map(|(_, b)| b.hidden).sum(),
        }
    }
}
