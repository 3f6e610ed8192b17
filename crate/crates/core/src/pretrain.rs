//! Span-masked reconstruction pretraining of a single branch.
//!
//! Contiguous spans of front-end frames are replaced by a learned mask vector
//! before positions are added; the encoder output at masked frames is mapped
//! back to a per-frame target and scored by mean squared error. The mask
//! vector and the reconstruction layer are discarded afterwards.

use rand::Rng;
use trisleep_numcore::{init, par, Execution, Graph, ParamId, ParamStore, Scalar, SeedStream, Tensor, Var};
use trisleep_sync::Modality;

use crate::config::{BranchConfig, ModelConfig, Schedule};
use crate::encoder::Branch;
use crate::error::{CoreError, Result};
use crate::layers::Linear;
use crate::train::{fit, TrainConfig, TrainHistory};

/// Envelope sub-blocks per frame for waveform targets.
pub const ENVELOPE_BLOCKS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPlan {
    pub mask_ratio: f64,
    pub span_length: usize,
}

impl Default for MaskPlan {
    fn default() -> Self {
        Self {
            mask_ratio: 0.15,
            span_length: 10,
        }
    }
}

impl MaskPlan {
    /// Number of spans placed in a sequence of `n` frames.
    pub fn spans_for(&self, n: usize) -> usize {
        if self.mask_ratio <= 0.0 {
            return 0;
        }
        let wanted = (self.mask_ratio * n as f64 / self.span_length as f64).round() as usize;
        wanted.max(1).min(n / self.span_length)
    }

    /// Sorted masked frame indices: `spans_for(n)` non-overlapping spans,
    /// their gaps drawn uniformly from the leftover frames.
    pub fn sample(&self, n: usize, seed: SeedStream) -> Result<Vec<usize>> {
        if self.span_length == 0 {
            return Err(CoreError::Config("span length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(CoreError::Config(format!("mask ratio {} outside [0, 1]", self.mask_ratio)));
        }
        if self.mask_ratio <= 0.0 {
            return Ok(Vec::new());
        }
        if n <= self.span_length {
            return Err(CoreError::Input(format!(
                "sequence of {n} frames is not longer than the span length {}",
                self.span_length
            )));
        }
        let k = self.spans_for(n);
        let free = n - k * self.span_length;
        let mut rng = seed.rng();
        let mut offsets: Vec<usize> = (0..k).map(|_| rng.gen_range(0..=free)).collect();
        offsets.sort_unstable();
        let mut out = Vec::with_capacity(k * self.span_length);
        for (j, o) in offsets.into_iter().enumerate() {
            let start = o + j * self.span_length;
            out.extend(start..start + self.span_length);
        }
        Ok(out)
    }
}

/// Replaces the planned spans of `features: [N, d]` with `mask: [d]`.
pub fn span_mask<S: Scalar>(g: &mut Graph<S>, features: &Var<S>, mask: &Var<S>, plan: &MaskPlan, seed: SeedStream) -> Result<(Var<S>, Vec<usize>)> {
    let (n, _) = features.value().dims2("span_mask")?;
    let rows = plan.sample(n, seed)?;
    if rows.is_empty() {
        return Ok((features.clone(), rows));
    }
    Ok((g.replace_rows(features, mask, &rows)?, rows))
}

/// Per-frame reconstruction target of a raw signal.
///
/// IMU frames are the six raw channels. Waveform frames are the log RMS of
/// [`ENVELOPE_BLOCKS`] equal sub-blocks of the frame's receptive window.
pub fn reconstruction_target(cfg: &BranchConfig, signal: &Tensor) -> Result<Tensor> {
    let (c, t) = signal.dims2("reconstruction_target")?;
    match &cfg.conv {
        None => Ok(signal.transpose2()?),
        Some(conv) => {
            if c != 1 {
                return Err(CoreError::Input(format!("{} signal must have one channel, got {c}", cfg.modality)));
            }
            let n = conv.output_len(t).ok_or_else(|| CoreError::Input(format!("{t} samples is shorter than one frame")))?;
            let (rf, hop) = (conv.receptive_field(), conv.hop());
            let block = (rf / ENVELOPE_BLOCKS).max(1);
            let x = signal.data();
            Ok(Tensor::from_fn(&[n, ENVELOPE_BLOCKS], |idx| {
                let (j, b) = (idx / ENVELOPE_BLOCKS, idx % ENVELOPE_BLOCKS);
                let start = (j * hop + b * block).min(t);
                let end = (start + block).min(t);
                let ms = x[start..end].iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / (end - start).max(1) as f64;
                (ms.sqrt() + 1e-3).ln() as f32
            }))
        }
    }
}

/// Centers every target per column, then scales each column by its standard
/// deviation over the whole centered corpus. Per-recording offsets (sensor
/// gain in the log envelope, device orientation in IMU frames) drop out;
/// quiet segments stay near zero.
pub fn normalize_targets(targets: &mut [Tensor]) {
    let Some(first) = targets.first() else { return };
    let d = first.shape()[1];
    let mut sq = vec![0.0f64; d];
    let mut count = 0usize;
    for t in targets.iter_mut() {
        let n = t.shape()[0];
        let mut mean = vec![0.0f64; d];
        for r in 0..n {
            for (c, &v) in t.row(r).iter().enumerate() {
                mean[c] += v as f64 / n as f64;
            }
        }
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            let centered = *v as f64 - mean[i % d];
            sq[i % d] += centered * centered;
            *v = centered as f32;
        }
        count += n;
    }
    let scale: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt().max(1e-6)).collect();
    for t in targets.iter_mut() {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = (*v as f64 / scale[i % d]) as f32;
        }
    }
}

/// A branch with the pretraining-only mask vector and reconstruction layer.
#[derive(Debug, Clone)]
pub struct PretrainNet {
    pub branch: Branch,
    pub mask: ParamId,
    pub recon: Linear,
}

impl PretrainNet {
    pub fn new(store: &mut ParamStore, seed: SeedStream, model: &ModelConfig, modality: Modality) -> Result<Self> {
        let cfg = model.branch(modality);
        let branch = Branch::new(store, seed, cfg, model.conventional_scale, model.layer_norm_eps, true)?;
        let name = format!("pretrain.{}.mask", modality.name());
        let mask = store.add(&name, init::normal(seed.split_str(&name), &[cfg.hidden], 0.02))?;
        let target_dim = match cfg.conv {
            Some(_) => ENVELOPE_BLOCKS,
            None => Modality::Imu.channels(),
        };
        let recon = Linear::new(store, seed, &format!("pretrain.{}.recon", modality.name()), cfg.hidden, target_dim, true)?;
        Ok(Self { branch, mask, recon })
    }

    /// Masked-reconstruction loss of one signal against its (standardized) target.
    pub fn loss<S: Scalar>(&self, g: &mut Graph<S>, signal: &Tensor, target: &Tensor, plan: &MaskPlan, seed: SeedStream) -> Result<Var<S>> {
        let x = g.constant(signal.cast())?;
        let features = self.branch.features(g, &x)?;
        let mask = g.param(self.mask)?;
        let (masked, rows) = span_mask(g, &features, &mask, plan, seed)?;
        let h = self.branch.embed(g, &masked)?;
        let h = self.branch.forward(g, &h, Schedule::None, &[])?;
        let pred = self.recon.forward(g, &h)?;
        if pred.shape() != target.shape() {
            return Err(CoreError::Input(format!(
                "reconstruction {:?} does not match target {:?}",
                pred.shape(),
                target.shape()
            )));
        }
        Ok(g.masked_mse(&pred, target.cast(), &rows)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub plan: MaskPlan,
    pub train: TrainConfig,
    /// Signals used to measure the loss before and after training.
    pub probe_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            plan: MaskPlan::default(),
            train: TrainConfig::default(),
            probe_size: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub modality: Modality,
    /// Branch weights plus the discarded `pretrain.*` parameters.
    pub store: ParamStore,
    pub history: TrainHistory,
    /// Mean masked MSE on the probe set with fixed masks.
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl PretrainOutcome {
    /// Only the branch parameters, ready to load into a fusion model.
    pub fn branch_params(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (_, p) in self.store.iter().filter(|(_, p)| !p.name.starts_with("pretrain.")) {
            out.add(p.name.clone(), p.value.clone()).expect("names are unique");
        }
        out
    }
}

fn probe_loss(net: &PretrainNet, store: &ParamStore, signals: &[&Tensor], targets: &[Tensor], plan: &MaskPlan, seed: SeedStream, exec: Execution) -> Result<f64> {
    let values = store.values::<f32>();
    let inner = if exec.is_parallel() { Execution::Sequential } else { exec };
    let losses = par::map_range(exec, signals.len(), |i| -> Result<f64> {
        let mut g = Graph::inference(values.clone()).with_execution(inner);
        Ok(net.loss(&mut g, signals[i], &targets[i], plan, seed.split(i as u64))?.item() as f64)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / signals.len() as f64)
}

/// Pretrains the `modality` branch of `model` on unlabeled signals.
pub fn pretrain_branch(model: &ModelConfig, modality: Modality, signals: &[&Tensor], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if signals.is_empty() {
        return Err(CoreError::Data(format!("no {modality} signals to pretrain on")));
    }
    let branch_cfg = model.branch(modality);
    let mut targets = signals
        .iter()
        .map(|s| reconstruction_target(branch_cfg, s))
        .collect::<Result<Vec<_>>>()?;
    normalize_targets(&mut targets);
    let root = SeedStream::new(cfg.train.seed).split_str("pretrain").split_str(modality.name());
    let mut store = ParamStore::new();
    let net = PretrainNet::new(&mut store, root.split_str("init"), model, modality)?;
    let probe = cfg.probe_size.clamp(1, signals.len());
    let probe_seed = root.split_str("probe");
    let initial_loss = probe_loss(&net, &store, &signals[..probe], &targets[..probe], &cfg.plan, probe_seed, cfg.train.exec)?;
    let history = fit(&mut store, signals.len(), &cfg.train, |g, i, seed| {
        net.loss(g, signals[i], &targets[i], &cfg.plan, seed)
    })?;
    let final_loss = probe_loss(&net, &store, &signals[..probe], &targets[..probe], &cfg.plan, probe_seed, cfg.train.exec)?;
    Ok(PretrainOutcome {
        modality,
        store,
        history,
        initial_loss,
        final_loss,
    })
}
