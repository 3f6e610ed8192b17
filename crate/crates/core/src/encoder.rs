//! Transformer branches: post-norm layers that attend either to their own
//! sequence or to a fused key/value sequence from the other branches.

use trisleep_numcore::{Graph, ParamStore, Scalar, SeedStream, Var};

use crate::config::{BranchConfig, Schedule};
use crate::error::{CoreError, Result};
use crate::features::{add_positional, Frontend};
use crate::layers::{Linear, Norm};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub norm1: Norm,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub norm2: Norm,
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Multiplier on query-key products.
    pub scale: f64,
}

impl TransformerLayer {
    pub fn new(store: &mut ParamStore, seed: SeedStream, prefix: &str, cfg: &BranchConfig, conventional_scale: bool, eps: f64) -> Result<Self> {
        let d = cfg.hidden;
        let scale_dim = if conventional_scale { d / cfg.num_heads } else { d };
        Ok(Self {
            wq: Linear::new(store, seed, &format!("{prefix}.attn.wq"), d, d, false)?,
            wk: Linear::new(store, seed, &format!("{prefix}.attn.wk"), d, d, false)?,
            wv: Linear::new(store, seed, &format!("{prefix}.attn.wv"), d, d, false)?,
            wo: Linear::new(store, seed, &format!("{prefix}.attn.wo"), d, d, true)?,
            norm1: Norm::new(store, &format!("{prefix}.norm1"), d, eps)?,
            ffn1: Linear::new(store, seed, &format!("{prefix}.ffn1"), d, cfg.intermediate, true)?,
            ffn2: Linear::new(store, seed, &format!("{prefix}.ffn2"), cfg.intermediate, d, true)?,
            norm2: Norm::new(store, &format!("{prefix}.norm2"), d, eps)?,
            hidden: d,
            heads: cfg.num_heads,
            dropout: cfg.dropout,
            scale: 1.0 / (scale_dim as f64).sqrt(),
        })
    }

    fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    fn qkv<S: Scalar>(&self, g: &mut Graph<S>, h: &Var<S>, kv: &Var<S>) -> Result<(Var<S>, Var<S>, Var<S>)> {
        if kv.value().dims2("attention")?.1 != self.hidden {
            return Err(CoreError::Input(format!(
                "key/value width {:?} does not match the layer width {}",
                kv.shape(),
                self.hidden
            )));
        }
        Ok((self.wq.forward(g, h)?, self.wk.forward(g, kv)?, self.wv.forward(g, kv)?))
    }

    fn probs<S: Scalar>(&self, g: &mut Graph<S>, q: &Var<S>, k: &Var<S>, head: usize) -> Result<Var<S>> {
        let hd = self.head_dim();
        let qh = g.slice_cols(q, head * hd, hd)?;
        let kh = g.slice_cols(k, head * hd, hd)?;
        let logits = g.matmul_ex(&qh, &kh, false, true, S::from_f64(self.scale))?;
        Ok(g.softmax_rows(&logits)?)
    }

    /// Per-head attention matrices `[N_q, N_kv]`.
    pub fn attention_probs<S: Scalar>(&self, g: &mut Graph<S>, h: &Var<S>, kv: &Var<S>) -> Result<Vec<Var<S>>> {
        let (q, k, _) = self.qkv(g, h, kv)?;
        (0..self.heads).map(|i| self.probs(g, &q, &k, i)).collect()
    }

    /// Concatenated head outputs before the output projection.
    pub fn attend<S: Scalar>(&self, g: &mut Graph<S>, h: &Var<S>, kv: &Var<S>) -> Result<Var<S>> {
        let (q, k, v) = self.qkv(g, h, kv)?;
        let hd = self.head_dim();
        let mut outs = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let p = self.probs(g, &q, &k, i)?;
            let vh = g.slice_cols(&v, i * hd, hd)?;
            outs.push(g.matmul(&p, &vh)?);
        }
        let refs: Vec<&Var<S>> = outs.iter().collect();
        Ok(g.concat_cols(&refs)?)
    }

    /// Full layer. Queries come from `h`; keys and values from `kv`, or from `h` itself when absent.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, h: &Var<S>, kv: Option<&Var<S>>) -> Result<Var<S>> {
        let mixed = self.attend(g, h, kv.unwrap_or(h))?;
        let a = self.wo.forward(g, &mixed)?;
        let a = g.dropout(&a, self.dropout)?;
        let h1 = g.add(h, &a)?;
        let h1 = self.norm1.forward(g, &h1)?;
        let f = self.ffn1.forward(g, &h1)?;
        let f = g.gelu(&f)?;
        let f = self.ffn2.forward(g, &f)?;
        let f = g.dropout(&f, self.dropout)?;
        let h2 = g.add(&h1, &f)?;
        self.norm2.forward(g, &h2)
    }

    pub fn self_attention<S: Scalar>(&self, g: &mut Graph<S>, h: &Var<S>) -> Result<Var<S>> {
        self.forward(g, h, None)
    }

    /// Queries from `h`, keys/values from the fused peer sequence.
    pub fn cross_attention<S: Scalar>(&self, g: &mut Graph<S>, h: &Var<S>, h_cross: &Var<S>) -> Result<Var<S>> {
        if h_cross.shape() != h.shape() {
            return Err(CoreError::Input(format!(
                "fused key/value shape {:?} differs from the query shape {:?}",
                h_cross.shape(),
                h.shape()
            )));
        }
        self.forward(g, h, Some(h_cross))
    }
}

/// One modality's front end plus transformer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub config: BranchConfig,
    pub frontend: Frontend,
    pub layers: Vec<TransformerLayer>,
}

impl Branch {
    /// Registers parameters under `{modality}.frontend.*` and `{modality}.layer{i}.*`.
    /// With `with_layers == false` only the front end is built.
    pub fn new(store: &mut ParamStore, seed: SeedStream, cfg: &BranchConfig, conventional_scale: bool, eps: f64, with_layers: bool) -> Result<Self> {
        cfg.validate()?;
        let prefix = cfg.modality.name();
        let frontend = Frontend::new(store, seed, prefix, cfg, eps)?;
        let layers = if with_layers {
            (0..cfg.num_layers)
                .map(|i| TransformerLayer::new(store, seed, &format!("{prefix}.layer{i}"), cfg, conventional_scale, eps))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            config: cfg.clone(),
            frontend,
            layers,
        })
    }

    /// Front-end features `[N, L_e]` before positional encoding.
    pub fn features<S: Scalar>(&self, g: &mut Graph<S>, signal: &Var<S>) -> Result<Var<S>> {
        self.frontend.forward(g, signal)
    }

    /// Features with positions added: the input of layer 0.
    pub fn embed<S: Scalar>(&self, g: &mut Graph<S>, features: &Var<S>) -> Result<Var<S>> {
        add_positional(g, features)
    }

    /// Runs every layer in order. `cross[i]` is the fused key/value input of
    /// layer `i` and must be present wherever `schedule` marks a cross layer.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: &Var<S>, schedule: Schedule, cross: &[Option<Var<S>>]) -> Result<Var<S>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = if schedule.is_cross(i) {
                let kv = cross.get(i).and_then(Option::as_ref).ok_or_else(|| {
                    CoreError::Config(format!("{} layer {i} is a cross layer but no fused input was supplied", self.config.modality))
                })?;
                layer.cross_attention(g, &h, kv)?
            } else {
                layer.self_attention(g, &h)?
            };
        }
        Ok(h)
    }
}
