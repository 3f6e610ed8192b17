//! Branch front ends: a strided convolution stack for waveforms, a per-step
//! linear projection for IMU, and the sinusoidal positional encoding.

use trisleep_numcore::{init, Graph, NumError, ParamId, ParamStore, Scalar, SeedStream, Tensor, Var};
use trisleep_sync::Modality;

use crate::config::{BranchConfig, ConvExtractorConfig};
use crate::error::{CoreError, Result};
use crate::layers::{Linear, Norm};

/// Conv stack `[1, T] -> [N, L_e]`; every conv is followed by layer norm and GELU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvExtractor {
    pub config: ConvExtractorConfig,
    pub kernels: Vec<ParamId>,
    pub norms: Vec<Norm>,
    pub out_norm: Norm,
    pub proj: Linear,
}

impl ConvExtractor {
    pub fn new(store: &mut ParamStore, seed: SeedStream, prefix: &str, cfg: &ConvExtractorConfig, hidden: usize, eps: f64) -> Result<Self> {
        cfg.validate()?;
        let mut kernels = Vec::new();
        let mut norms = Vec::new();
        let mut c_in = 1;
        for (i, &k) in cfg.kernels.iter().enumerate() {
            let name = format!("{prefix}.conv{i}.weight");
            let w = init::kaiming_conv(seed.split_str(&name), cfg.channels, c_in, k);
            kernels.push(store.add(name, w)?);
            norms.push(Norm::new(store, &format!("{prefix}.conv{i}.norm"), cfg.channels, eps)?);
            c_in = cfg.channels;
        }
        Ok(Self {
            config: cfg.clone(),
            kernels,
            norms,
            out_norm: Norm::new(store, &format!("{prefix}.norm"), cfg.channels, eps)?,
            proj: Linear::new(store, seed, &format!("{prefix}.proj"), cfg.channels, hidden, true)?,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, wave: &Var<S>) -> Result<Var<S>> {
        let (c, t) = wave.value().dims2("conv_extract")?;
        if c != 1 {
            return Err(NumError::Shape {
                op: "conv_extract",
                left: wave.shape().to_vec(),
                right: vec![1, t],
            }
            .into());
        }
        let rf = self.config.receptive_field();
        if t < rf {
            return Err(NumError::InputTooShort {
                op: "conv_extract",
                len: t,
                kernel: rf,
            }
            .into());
        }
        let mut x = wave.clone();
        let last = self.kernels.len() - 1;
        let mut frames = None;
        for (i, (&w, norm)) in self.kernels.iter().zip(&self.norms).enumerate() {
            let w = g.param(w)?;
            let y = g.conv1d(&x, &w, self.config.strides[i])?;
            let y = g.transpose(&y)?;
            let y = norm.forward(g, &y)?;
            let y = g.gelu(&y)?;
            if i == last {
                frames = Some(y);
            } else {
                x = g.transpose(&y)?;
            }
        }
        let frames = frames.expect("at least one conv layer");
        let h = self.out_norm.forward(g, &frames)?;
        self.proj.forward(g, &h)
    }
}

/// Per-timestep projection `[6, T] -> [T, L_e]` followed by layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuProjection {
    pub proj: Linear,
    pub norm: Norm,
}

impl ImuProjection {
    pub fn new(store: &mut ParamStore, seed: SeedStream, prefix: &str, hidden: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(store, seed, &format!("{prefix}.proj"), Modality::Imu.channels(), hidden, true)?,
            norm: Norm::new(store, &format!("{prefix}.norm"), hidden, eps)?,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, imu: &Var<S>) -> Result<Var<S>> {
        let (c, t) = imu.value().dims2("imu_project")?;
        if c != Modality::Imu.channels() {
            return Err(NumError::Shape {
                op: "imu_project",
                left: imu.shape().to_vec(),
                right: vec![Modality::Imu.channels(), t],
            }
            .into());
        }
        let x = g.transpose(imu)?;
        let y = self.proj.forward(g, &x)?;
        self.norm.forward(g, &y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frontend {
    Conv(ConvExtractor),
    Imu(ImuProjection),
}

impl Frontend {
    pub fn new(store: &mut ParamStore, seed: SeedStream, prefix: &str, cfg: &BranchConfig, eps: f64) -> Result<Self> {
        let prefix = format!("{prefix}.frontend");
        match &cfg.conv {
            Some(conv) => Ok(Frontend::Conv(ConvExtractor::new(store, seed, &prefix, conv, cfg.hidden, eps)?)),
            None if cfg.modality == Modality::Imu => Ok(Frontend::Imu(ImuProjection::new(store, seed, &prefix, cfg.hidden, eps)?)),
            None => Err(CoreError::Config(format!("{} branch needs a conv extractor", cfg.modality))),
        }
    }

    /// Raw signal `[channels, samples]` to features `[N, L_e]`, before positions.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, signal: &Var<S>) -> Result<Var<S>> {
        match self {
            Frontend::Conv(c) => c.forward(g, signal),
            Frontend::Imu(p) => p.forward(g, signal),
        }
    }
}

/// Sinusoidal table `[n, d]`: even columns `sin(p / 10000^(2i/d))`, odd columns the matching cosine.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[n, d], |idx| {
        let (p, c) = (idx / d, idx % d);
        let pair = (c / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if c % 2 == 0 {
            angle.sin() as f32
        } else {
            angle.cos() as f32
        }
    })
}

pub fn add_positional<S: Scalar>(g: &mut Graph<S>, x: &Var<S>) -> Result<Var<S>> {
    let (n, d) = x.value().dims2("add_positional")?;
    let pe = g.constant(positional_encoding(n, d).cast())?;
    Ok(g.add(x, &pe)?)
}
