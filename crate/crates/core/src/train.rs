//! Mini-batch training with per-sample gradients computed in parallel and
//! reduced in a fixed order, plus batched inference.

use log::debug;
use trisleep_numcore::{par, AdamConfig, AdamState, Execution, Gradients, Graph, ParamStore, SeedStream, Tensor, Var};
use trisleep_sync::Trimodal;

use crate::error::{CoreError, Result};
use crate::fusion::Model;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Peak learning rate reached after warmup.
    pub lr: f64,
    /// Fraction of `steps` spent ramping the learning rate up linearly.
    pub warmup_frac: f64,
    /// Rescales the batch gradient to at most this global L2 norm.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 16,
            lr: 1e-4,
            warmup_frac: 0.1,
            grad_clip: Some(1.0),
            seed: 0,
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    /// Learning rate used at (zero-based) `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warmup = (self.warmup_frac * self.steps as f64).ceil() as usize;
        if step < warmup {
            self.lr * (step + 1) as f64 / warmup as f64
        } else {
            self.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(CoreError::Config("learning rate must be positive and warmup within [0, 1]".into()));
        }
        Ok(())
    }
}

/// Loss after every step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
}

/// Visits every sample once per epoch in a seed-determined order.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    seed: SeedStream,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, seed: SeedStream) -> Self {
        let mut s = Self {
            n,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut self.seed.split(self.epoch).rng());
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.n) {
            if self.pos == self.n {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn clip(grads: &mut Gradients<f32>, max_norm: f64, n_params: usize) {
    let mut sq = 0.0f64;
    for i in 0..n_params {
        if let Some(g) = grads.get(trisleep_numcore::ParamId(i)) {
            sq += g.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        grads.scale((max_norm / norm) as f32);
    }
}

/// Generic optimizer loop over `n_samples` examples. `loss_fn` builds the loss
/// of one sample on a training graph; `seed` is unique to that sample and step.
pub fn fit<F>(store: &mut ParamStore, n_samples: usize, cfg: &TrainConfig, loss_fn: F) -> Result<TrainHistory>
where
    F: Fn(&mut Graph<f32>, usize, SeedStream) -> Result<Var<f32>> + Sync,
{
    cfg.validate()?;
    if n_samples == 0 {
        return Err(CoreError::Data("training set is empty".into()));
    }
    let root = SeedStream::new(cfg.seed);
    let mut sampler = BatchSampler::new(n_samples, root.split_str("order"));
    let mut adam = AdamState::new(
        store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    // Per-sample graphs run single-threaded when the batch itself is spread over threads.
    let inner = if cfg.exec.is_parallel() { Execution::Sequential } else { cfg.exec };
    let mut history = TrainHistory::default();
    for step in 0..cfg.steps {
        let batch = sampler.next_batch(cfg.batch_size);
        let values = store.values::<f32>();
        let step_seed = root.split_str("dropout").split(step as u64);
        let results = par::map_range(cfg.exec, batch.len(), |pos| -> Result<(f64, Gradients<f32>)> {
            let sample = batch[pos];
            let mut g = Graph::training(values.clone(), step_seed.split(pos as u64)).with_execution(inner);
            let loss = loss_fn(&mut g, sample, step_seed.split_str("sample").split(pos as u64))?;
            let grads = g.backward(&loss)?;
            Ok((loss.item() as f64, grads))
        });
        let mut total = 0.0;
        let mut acc: Option<Gradients<f32>> = None;
        for r in results {
            let (loss, grads) = r?;
            total += loss;
            match acc.as_mut() {
                Some(a) => a.accumulate(&grads),
                None => acc = Some(grads),
            }
        }
        let mut grads = acc.expect("non-empty batch");
        grads.scale(1.0 / batch.len() as f32);
        if let Some(max) = cfg.grad_clip {
            clip(&mut grads, max, store.len());
        }
        store.set_grads(&grads);
        adam.set_lr(cfg.lr_at(step));
        adam.step(store)?;
        let mean = total / batch.len() as f64;
        if !mean.is_finite() {
            return Err(CoreError::Data(format!("loss became non-finite at step {step}")));
        }
        debug!("step {step}: loss {mean:.5}");
        history.losses.push(mean);
    }
    Ok(history)
}

/// One labeled training or evaluation example.
pub type Example<'a> = (&'a Trimodal<Tensor>, u8);

/// Fine-tunes `model` with cross-entropy on `examples`.
pub fn train(model: &mut Model, examples: &[Example<'_>], cfg: &TrainConfig) -> Result<TrainHistory> {
    let net = &model.net;
    fit(&mut model.store, examples.len(), cfg, |g, i, _| {
        let (signals, label) = examples[i];
        net.loss(g, signals, label)
    })
}

/// Logits `[1, 2]` of each input, computed on inference graphs.
pub fn predict_logits(model: &Model, inputs: &[&Trimodal<Tensor>], exec: Execution) -> Result<Vec<[f64; 2]>> {
    let values = model.store.values::<f32>();
    let inner = if exec.is_parallel() { Execution::Sequential } else { exec };
    par::map_range(exec, inputs.len(), |i| -> Result<[f64; 2]> {
        let mut g = Graph::inference(values.clone()).with_execution(inner);
        let out = model.forward(&mut g, inputs[i])?;
        let d = out.logits.value().data();
        Ok([d[0] as f64, d[1] as f64])
    })
    .into_iter()
    .collect()
}

/// Mean cross-entropy of `examples` and the argmax prediction of each.
pub fn evaluate(model: &Model, examples: &[Example<'_>], exec: Execution) -> Result<(f64, Vec<u8>)> {
    if examples.is_empty() {
        return Err(CoreError::Data("evaluation set is empty".into()));
    }
    let inputs: Vec<&Trimodal<Tensor>> = examples.iter().map(|e| e.0).collect();
    let logits = predict_logits(model, &inputs, exec)?;
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(logits.len());
    for (l, &(_, label)) in logits.iter().zip(examples) {
        let max = l[0].max(l[1]);
        let lse = max + ((l[0] - max).exp() + (l[1] - max).exp()).ln();
        loss += lse - l[label as usize];
        preds.push(u8::from(l[1] > l[0]));
    }
    Ok((loss / examples.len() as f64, preds))
}
