//! Cross-branch key/value fusion, the trimodal model in its four modes,
//! pooling and the classification head.

use trisleep_numcore::{Graph, ParamId, ParamStore, Scalar, SeedStream, Tensor, Var};
use trisleep_sync::{Modality, Trimodal};

use crate::config::{FusionMode, ModelConfig};
use crate::encoder::Branch;
use crate::error::{CoreError, Result};
use crate::layers::Linear;

/// Builds one branch's fused key/value sequence from its two peers.
///
/// Each peer is mapped to the target width by a learned linear map and to the
/// target frame count by linear interpolation over frame positions; the two
/// results are combined pointwise by the two mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossKv {
    pub target: Modality,
    /// Projections of `target.peers()[0]` and `target.peers()[1]`.
    pub proj: [Linear; 2],
    pub mix: ParamId,
}

impl CrossKv {
    pub fn new(store: &mut ParamStore, seed: SeedStream, layer: usize, target: Modality, cfg: &ModelConfig) -> Result<Self> {
        let [l, m] = target.peers();
        let prefix = format!("cross.layer{layer}.{}", target.name());
        let to = cfg.branch(target).hidden;
        let proj = [
            Linear::new(store, seed, &format!("{prefix}.proj_{}", l.name()), cfg.branch(l).hidden, to, true)?,
            Linear::new(store, seed, &format!("{prefix}.proj_{}", m.name()), cfg.branch(m).hidden, to, true)?,
        ];
        let mix = store.add(format!("{prefix}.mix"), Tensor::full(&[2], 0.5))?;
        Ok(Self { target, proj, mix })
    }

    fn project<S: Scalar>(g: &mut Graph<S>, proj: &Linear, h: &Var<S>, frames: usize) -> Result<Var<S>> {
        let (n, width) = h.value().dims2("cross_kv_build")?;
        if n == 0 {
            return Err(CoreError::Input("cross_kv_build: empty source sequence".into()));
        }
        let resample = |g: &mut Graph<S>, x: &Var<S>| -> Result<Var<S>> {
            if n == frames {
                Ok(x.clone())
            } else {
                Ok(g.resample_rows(x, frames)?)
            }
        };
        // Interpolation weights sum to one, so the two orders agree; shrink first.
        if width > proj.fan_out {
            let y = proj.forward(g, h)?;
            resample(g, &y)
        } else {
            let y = resample(g, h)?;
            proj.forward(g, &y)
        }
    }

    /// `[frames, L_target]` fused sequence from peer states `h_l` and `h_m`.
    pub fn build<S: Scalar>(&self, g: &mut Graph<S>, h_l: &Var<S>, h_m: &Var<S>, frames: usize) -> Result<Var<S>> {
        if frames == 0 {
            return Err(CoreError::Input("cross_kv_build: empty target sequence".into()));
        }
        let pl = Self::project(g, &self.proj[0], h_l, frames)?;
        let pm = Self::project(g, &self.proj[1], h_m, frames)?;
        let a = g.param(self.mix)?;
        Ok(g.channel_mix(&[&pl, &pm], &a)?)
    }
}

/// `in -> in` ReLU `-> in/2` dropout `-> 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
    pub dropout: f64,
}

impl ClassifierHead {
    pub fn new(store: &mut ParamStore, seed: SeedStream, prefix: &str, input: usize, dropout: f64) -> Result<Self> {
        let mid = (input / 2).max(1);
        Ok(Self {
            fc1: Linear::new(store, seed, &format!("{prefix}.fc1"), input, input, true)?,
            fc2: Linear::new(store, seed, &format!("{prefix}.fc2"), input, mid, true)?,
            fc3: Linear::new(store, seed, &format!("{prefix}.fc3"), mid, 2, true)?,
            dropout,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: &Var<S>) -> Result<Var<S>> {
        let h = self.fc1.forward(g, x)?;
        let h = g.relu(&h)?;
        let h = self.fc2.forward(g, &h)?;
        let h = g.dropout(&h, self.dropout)?;
        self.fc3.forward(g, &h)
    }

    /// Layer widths from input to logits.
    pub fn dims(&self) -> [usize; 4] {
        [self.fc1.fan_in, self.fc1.fan_out, self.fc2.fan_out, self.fc3.fan_out]
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Heads {
    Shared(ClassifierHead),
    PerBranch(Trimodal<ClassifierHead>),
}

/// Mean over the time axis: `[N, d] -> [1, d]`.
pub fn mean_pool<S: Scalar>(g: &mut Graph<S>, x: &Var<S>) -> Result<Var<S>> {
    Ok(g.mean_rows(x)?)
}

/// Result of one forward pass over a single segment.
#[derive(Debug, Clone)]
pub struct Forward<S: Scalar> {
    /// `[1, 2]` logits.
    pub logits: Var<S>,
    /// Per-branch logits (late fusion only).
    pub branch_logits: Option<Trimodal<Var<S>>>,
    /// Pooled per-branch vectors in modality order (only the active ones).
    pub pooled: Vec<Var<S>>,
    /// Frames per active branch.
    pub frames: Vec<(Modality, usize)>,
}

/// Layer structure of a model: parameter handles plus the forward logic.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub branches: Trimodal<Option<Branch>>,
    /// Indexed by layer; present on cross layers in cross mode.
    pub cross: Vec<Option<Trimodal<CrossKv>>>,
    pub heads: Heads,
}

impl Network {
    /// Registers and initializes every parameter the mode uses; initial
    /// values depend only on `seed` and the parameter's name.
    pub fn new(config: ModelConfig, store: &mut ParamStore, seed: SeedStream) -> Result<Self> {
        config.validate()?;
        let eps = config.layer_norm_eps;
        let with_layers = config.mode != FusionMode::Early;
        let branches = Trimodal::try_from_fn(|m| -> Result<Option<Branch>> {
            if !config.mode.uses(m) {
                return Ok(None);
            }
            Branch::new(store, seed, config.branch(m), config.conventional_scale, eps, with_layers).map(Some)
        })?;
        let mut cross = Vec::new();
        if config.mode == FusionMode::Cross {
            for i in 0..config.branches.audio.num_layers {
                cross.push(if config.schedule.is_cross(i) {
                    Some(Trimodal::try_from_fn(|m| CrossKv::new(store, seed, i, m, &config))?)
                } else {
                    None
                });
            }
        }
        let heads = match config.mode {
            FusionMode::Late => Heads::PerBranch(Trimodal::try_from_fn(|m| {
                ClassifierHead::new(store, seed, &format!("head.{}", m.name()), config.branch(m).hidden, config.head_dropout)
            })?),
            _ => Heads::Shared(ClassifierHead::new(store, seed, "head", config.pooled_width(), config.head_dropout)?),
        };
        Ok(Self {
            config,
            branches,
            cross,
            heads,
        })
    }

    pub fn mode(&self) -> FusionMode {
        self.config.mode
    }

    pub fn branch(&self, m: Modality) -> Option<&Branch> {
        self.branches.get(m).as_ref()
    }

    fn active(&self) -> Vec<(Modality, &Branch)> {
        Modality::ALL.iter().filter_map(|&m| self.branch(m).map(|b| (m, b))).collect()
    }

    fn shared_head(&self) -> &ClassifierHead {
        match &self.heads {
            Heads::Shared(h) => h,
            Heads::PerBranch(_) => unreachable!("late fusion has per-branch heads"),
        }
    }

    /// Logits for one segment whose signals are `[channels, samples]` tensors.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, signals: &Trimodal<Tensor>) -> Result<Forward<S>> {
        let mut features = Vec::new();
        for (m, b) in self.active() {
            let x = g.constant(signals.get(m).cast())?;
            features.push((m, b.features(g, &x)?));
        }
        let frames: Vec<(Modality, usize)> = features.iter().map(|(m, f)| (*m, f.shape()[0])).collect();
        if self.mode() == FusionMode::Early {
            let pooled = features.iter().map(|(_, f)| mean_pool(g, f)).collect::<Result<Vec<_>>>()?;
            let logits = self.classify(g, &pooled)?;
            return Ok(Forward {
                logits,
                branch_logits: None,
                pooled,
                frames,
            });
        }
        let mut states = Vec::with_capacity(features.len());
        for ((m, f), (_, b)) in features.iter().zip(self.active()) {
            states.push((*m, b.embed(g, f)?));
        }
        drop(features);
        let states = match self.mode() {
            FusionMode::Cross => self.lockstep(g, states)?,
            _ => {
                let mut out = Vec::new();
                for (m, h) in states {
                    let b = self.branch(m).expect("active branch");
                    out.push((m, b.forward(g, &h, crate::config::Schedule::None, &[])?));
                }
                out
            }
        };
        let pooled = states.iter().map(|(_, h)| mean_pool(g, h)).collect::<Result<Vec<_>>>()?;
        if let Heads::PerBranch(heads) = &self.heads {
            let per = Trimodal::try_from_fn(|m| -> Result<Var<S>> {
                heads.get(m).forward(g, &pooled[m.index()])
            })?;
            let sum = g.add(&per.audio, &per.ecg)?;
            let sum = g.add(&sum, &per.imu)?;
            let logits = g.scale(&sum, S::from_f64(1.0 / 3.0))?;
            return Ok(Forward {
                logits,
                branch_logits: Some(per),
                pooled,
                frames,
            });
        }
        let logits = self.classify(g, &pooled)?;
        Ok(Forward {
            logits,
            branch_logits: None,
            pooled,
            frames,
        })
    }

    fn classify<S: Scalar>(&self, g: &mut Graph<S>, pooled: &[Var<S>]) -> Result<Var<S>> {
        let refs: Vec<&Var<S>> = pooled.iter().collect();
        let joined = if refs.len() == 1 { refs[0].clone() } else { g.concat_cols(&refs)? };
        self.shared_head().forward(g, &joined)
    }

    /// All three branches finish layer `i` before any starts `i + 1`; a cross
    /// layer fuses the peers' inputs to that layer.
    fn lockstep<S: Scalar>(&self, g: &mut Graph<S>, states: Vec<(Modality, Var<S>)>) -> Result<Vec<(Modality, Var<S>)>> {
        let mut h = Trimodal::new(states[0].1.clone(), states[1].1.clone(), states[2].1.clone());
        drop(states);
        let layers = self.config.branches.audio.num_layers;
        for i in 0..layers {
            let kv = match self.cross.get(i).and_then(Option::as_ref) {
                Some(cross) => Some(Trimodal::try_from_fn(|k| -> Result<Var<S>> {
                    let [l, m] = k.peers();
                    cross.get(k).build(g, h.get(l), h.get(m), h.get(k).shape()[0])
                })?),
                None if self.config.schedule.is_cross(i) => {
                    return Err(CoreError::Config(format!("layer {i} is scheduled for cross attention but has no fusion weights")))
                }
                None => None,
            };
            h = Trimodal::try_from_fn(|k| -> Result<Var<S>> {
                let layer = &self.branch(k).expect("cross mode uses every branch").layers[i];
                match &kv {
                    Some(kv) => layer.cross_attention(g, h.get(k), kv.get(k)),
                    None => layer.self_attention(g, h.get(k)),
                }
            })?;
        }
        Ok(Modality::ALL.iter().map(|&m| (m, h.get(m).clone())).collect())
    }

    /// Cross-entropy of one segment; late fusion averages the per-branch losses.
    pub fn loss<S: Scalar>(&self, g: &mut Graph<S>, signals: &Trimodal<Tensor>, label: u8) -> Result<Var<S>> {
        let out = self.forward(g, signals)?;
        let labels = [label as usize];
        match &out.branch_logits {
            Some(per) => {
                let a = g.cross_entropy(&per.audio, &labels)?;
                let e = g.cross_entropy(&per.ecg, &labels)?;
                let i = g.cross_entropy(&per.imu, &labels)?;
                let s = g.add(&a, &e)?;
                let s = g.add(&s, &i)?;
                Ok(g.scale(&s, S::from_f64(1.0 / 3.0))?)
            }
            None => Ok(g.cross_entropy(&out.logits, &labels)?),
        }
    }
}

/// A network together with its parameter values.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: Network,
    pub store: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: SeedStream) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Network::new(config, &mut store, seed)?;
        Ok(Self { net, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn mode(&self) -> FusionMode {
        self.net.config.mode
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_elements()
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, signals: &Trimodal<Tensor>) -> Result<Forward<S>> {
        self.net.forward(g, signals)
    }

    pub fn loss<S: Scalar>(&self, g: &mut Graph<S>, signals: &Trimodal<Tensor>, label: u8) -> Result<Var<S>> {
        self.net.loss(g, signals, label)
    }

    /// Copies every parameter of `src` whose name starts with `prefix` and
    /// also exists here. Shapes are checked before anything is written.
    pub fn load_matching(&mut self, src: &ParamStore, prefix: &str) -> Result<usize> {
        copy_matching(&mut self.store, src, prefix)
    }
}

/// Copies same-named parameters under `prefix` from `src` into `dst`;
/// nothing is written unless every match has the right shape.
pub fn copy_matching(dst: &mut ParamStore, src: &ParamStore, prefix: &str) -> Result<usize> {
    let mut pairs = Vec::new();
    for (_, p) in src.iter().filter(|(_, p)| p.name.starts_with(prefix)) {
        if let Some(id) = dst.id(&p.name) {
            let have = dst.get(id).value.shape();
            if have != p.value.shape() {
                return Err(CoreError::Load {
                    name: p.name.clone(),
                    detail: format!("shape {:?} does not fit {:?}", p.value.shape(), have),
                });
            }
            pairs.push((id, p.value.clone()));
        }
    }
    if pairs.is_empty() {
        return Err(CoreError::Load {
            name: format!("{prefix}*"),
            detail: "no parameter with this prefix exists in both models".into(),
        });
    }
    let n = pairs.len();
    for (id, value) in pairs {
        dst.get_mut(id).value = value;
    }
    Ok(n)
}
