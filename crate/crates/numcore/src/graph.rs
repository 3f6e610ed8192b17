//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] evaluates operations eagerly. When recording, every result is
//! appended to a tape together with what its backward rule needs; calling
//! [`Graph::backward`] walks the tape in reverse. A non-recording graph keeps
//! nothing, so intermediate activations are freed as soon as their [`Var`]s
//! drop, which is what makes full-scale inference fit in memory.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::Hasher;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NumError, Result};
use crate::kernels::{self, MatView};
use crate::par::Execution;
use crate::param::{Gradients, ParamId, ParamValues};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value produced inside a [`Graph`].
#[derive(Debug, Clone)]
pub struct Var<S: Scalar = f32> {
    id: Option<usize>,
    value: Arc<Tensor<S>>,
}

impl<S: Scalar> Var<S> {
    pub fn value(&self) -> &Tensor<S> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        self.value.data()[0]
    }
}

/// Backward rule of a user-defined operation: receives the output gradient
/// and the input values, returns one gradient per input.
pub type CustomBackward<S> = Box<dyn Fn(&Tensor<S>, &[&Tensor<S>]) -> Vec<Tensor<S>> + Send + Sync>;

enum Op<S: Scalar> {
    Constant,
    Param(ParamId),
    MatMul { a: usize, b: usize, ta: bool, tb: bool, alpha: S },
    Add { a: usize, b: usize },
    AddRow { a: usize, bias: usize },
    Scale { a: usize, c: S },
    Transpose { a: usize },
    Reshape { a: usize },
    SoftmaxRows { a: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<S>, inv_std: Vec<S> },
    Gelu { a: usize },
    Relu { a: usize },
    Dropout { a: usize, mask: Vec<S> },
    Conv1d { x: usize, w: usize, stride: usize },
    SliceCols { a: usize, start: usize },
    ConcatCols { parts: Vec<usize> },
    MeanRows { a: usize },
    ResampleRows { a: usize },
    ReplaceRows { x: usize, v: usize, rows: Vec<usize> },
    ChannelMix { parts: Vec<usize>, w: usize },
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<S> },
    MaskedMse { pred: usize, target: Arc<Tensor<S>>, rows: Vec<usize> },
    Custom { inputs: Vec<usize>, backward: CustomBackward<S> },
}

struct Node<S: Scalar> {
    op: Op<S>,
    value: Arc<Tensor<S>>,
    requires_grad: bool,
}

/// Evaluation context: parameter bindings, optional tape, dropout state.
pub struct Graph<S: Scalar = f32> {
    params: Arc<ParamValues<S>>,
    param_vars: HashMap<ParamId, Var<S>>,
    nodes: Vec<Node<S>>,
    recording: bool,
    dropout_rng: Option<ChaCha8Rng>,
    exec: Execution,
    perturb: Option<(ParamId, usize, S)>,
    /// Running hash of which side of every ReLU kink each input lies on.
    kinks: Option<DefaultHasher>,
}

fn ensure_finite<S: Scalar>(op: &'static str, t: &Tensor<S>) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NumError::NonFinite { op })
    }
}

fn dims2<S: Scalar>(op: &'static str, v: &Var<S>) -> Result<(usize, usize)> {
    v.value.dims2(op)
}

impl<S: Scalar> Graph<S> {
    /// Inference graph: no tape, dropout off.
    pub fn inference(params: Arc<ParamValues<S>>) -> Self {
        Self {
            params,
            param_vars: HashMap::new(),
            nodes: Vec::new(),
            recording: false,
            dropout_rng: None,
            exec: Execution::default(),
            perturb: None,
            kinks: None,
        }
    }

    /// Recording graph with dropout off (evaluation and gradient checks).
    pub fn recording(params: Arc<ParamValues<S>>) -> Self {
        Self {
            recording: true,
            ..Self::inference(params)
        }
    }

    /// Recording graph with dropout drawn from `seed`.
    pub fn training(params: Arc<ParamValues<S>>, seed: SeedStream) -> Self {
        Self {
            recording: true,
            dropout_rng: Some(seed.rng()),
            ..Self::inference(params)
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// Adds `delta` to one element of one parameter when it is bound.
    pub(crate) fn with_perturbation(mut self, id: ParamId, index: usize, delta: S) -> Self {
        self.perturb = Some((id, index, delta));
        self
    }

    pub(crate) fn with_kink_tracking(mut self) -> Self {
        self.kinks = Some(DefaultHasher::new());
        self
    }

    /// Signature of the piecewise-linear region the evaluation landed in.
    pub(crate) fn kink_signature(&self) -> Option<u64> {
        self.kinks.as_ref().map(Hasher::finish)
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    fn id_of(&self, v: &Var<S>) -> Result<usize> {
        match v.id {
            Some(id) if id < self.nodes.len() => Ok(id),
            _ if !self.recording => Ok(usize::MAX),
            _ => Err(NumError::Config("variable does not belong to this graph".into())),
        }
    }

    fn requires(&self, id: usize) -> bool {
        self.recording && self.nodes[id].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<S>, op: impl FnOnce() -> Op<S>, inputs: &[usize]) -> Result<Var<S>> {
        ensure_finite(name, &value)?;
        let value = Arc::new(value);
        if !self.recording {
            return Ok(Var { id: None, value });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: op(),
            value: value.clone(),
            requires_grad,
        });
        Ok(Var { id: Some(id), value })
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Result<Var<S>> {
        self.push("constant", t, || Op::Constant, &[])
    }

    /// Bound parameter value; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var<S>> {
        if let Some(v) = self.param_vars.get(&id) {
            return Ok(v.clone());
        }
        let mut value = self.params.get(id)?.clone();
        if let Some((pid, idx, delta)) = self.perturb {
            if pid == id {
                let mut t = (*value).clone();
                t.data_mut()[idx] += delta;
                value = Arc::new(t);
            }
        }
        let var = if self.recording {
            let nid = self.nodes.len();
            self.nodes.push(Node {
                op: Op::Param(id),
                value: value.clone(),
                requires_grad: true,
            });
            Var { id: Some(nid), value }
        } else {
            Var { id: None, value }
        };
        self.param_vars.insert(id, var.clone());
        Ok(var)
    }

    /// `alpha * op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul_ex(&mut self, a: &Var<S>, b: &Var<S>, ta: bool, tb: bool, alpha: S) -> Result<Var<S>> {
        let (ar, ac) = dims2("matmul", a)?;
        let (br, bc) = dims2("matmul", b)?;
        let av = MatView::row_major(a.value.data(), ar, ac).t_if(ta);
        let bv = MatView::row_major(b.value.data(), br, bc).t_if(tb);
        if av.cols != bv.rows {
            return Err(NumError::Shape {
                op: "matmul",
                left: vec![av.rows, av.cols],
                right: vec![bv.rows, bv.cols],
            });
        }
        let mut out = vec![S::zero(); av.rows * bv.cols];
        kernels::gemm(self.exec, alpha, av, bv, S::zero(), &mut out);
        let value = Tensor::new(vec![av.rows, bv.cols], out)?;
        let (ia, ib) = (self.id_of(a)?, self.id_of(b)?);
        self.push("matmul", value, || Op::MatMul { a: ia, b: ib, ta, tb, alpha }, &[ia, ib])
    }

    pub fn matmul(&mut self, a: &Var<S>, b: &Var<S>) -> Result<Var<S>> {
        self.matmul_ex(a, b, false, false, S::one())
    }

    pub fn add(&mut self, a: &Var<S>, b: &Var<S>) -> Result<Var<S>> {
        if a.shape() != b.shape() {
            return Err(NumError::Shape {
                op: "add",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let mut out = (*a.value).clone();
        out.add_assign(&b.value);
        let (ia, ib) = (self.id_of(a)?, self.id_of(b)?);
        self.push("add", out, || Op::Add { a: ia, b: ib }, &[ia, ib])
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: &Var<S>, bias: &Var<S>) -> Result<Var<S>> {
        let (m, n) = dims2("add_row", a)?;
        if bias.value.len() != n {
            return Err(NumError::Shape {
                op: "add_row",
                left: a.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        let mut out = (*a.value).clone();
        let b = bias.value.data();
        for r in 0..m {
            for (o, &bv) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let (ia, ib) = (self.id_of(a)?, self.id_of(bias)?);
        self.push("add_row", out, || Op::AddRow { a: ia, bias: ib }, &[ia, ib])
    }

    pub fn scale(&mut self, a: &Var<S>, c: S) -> Result<Var<S>> {
        let out = a.value.map(|v| v * c);
        let ia = self.id_of(a)?;
        self.push("scale", out, || Op::Scale { a: ia, c }, &[ia])
    }

    pub fn transpose(&mut self, a: &Var<S>) -> Result<Var<S>> {
        let out = a.value.transpose2()?;
        let ia = self.id_of(a)?;
        self.push("transpose", out, || Op::Transpose { a: ia }, &[ia])
    }

    pub fn reshape(&mut self, a: &Var<S>, shape: &[usize]) -> Result<Var<S>> {
        let out = (*a.value).clone().reshape(shape.to_vec())?;
        let ia = self.id_of(a)?;
        self.push("reshape", out, || Op::Reshape { a: ia }, &[ia])
    }

    pub fn softmax_rows(&mut self, a: &Var<S>) -> Result<Var<S>> {
        let (m, n) = dims2("softmax_rows", a)?;
        ensure_finite("softmax_rows", &a.value)?;
        let out = Tensor::new(vec![m, n], kernels::softmax_rows(a.value.data(), m, n))?;
        let ia = self.id_of(a)?;
        self.push("softmax_rows", out, || Op::SoftmaxRows { a: ia }, &[ia])
    }

    /// Normalizes over the last dimension, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: &Var<S>, gamma: &Var<S>, beta: &Var<S>, eps: S) -> Result<Var<S>> {
        let d = *x.shape().last().ok_or(NumError::Empty { op: "layer_norm" })?;
        if gamma.value.len() != d || beta.value.len() != d {
            return Err(NumError::Shape {
                op: "layer_norm",
                left: x.shape().to_vec(),
                right: gamma.shape().to_vec(),
            });
        }
        let (y, xhat, inv_std) = kernels::layer_norm(x.value.data(), d, gamma.value.data(), beta.value.data(), eps);
        let out = Tensor::new(x.shape().to_vec(), y)?;
        let (ix, ig, ib) = (self.id_of(x)?, self.id_of(gamma)?, self.id_of(beta)?);
        self.push(
            "layer_norm",
            out,
            || Op::LayerNorm { x: ix, gamma: ig, beta: ib, xhat, inv_std },
            &[ix, ig, ib],
        )
    }

    pub fn gelu(&mut self, a: &Var<S>) -> Result<Var<S>> {
        let out = a.value.map(kernels::gelu);
        let ia = self.id_of(a)?;
        self.push("gelu", out, || Op::Gelu { a: ia }, &[ia])
    }

    pub fn relu(&mut self, a: &Var<S>) -> Result<Var<S>> {
        let out = a.value.map(|v| v.max(S::zero()));
        if let Some(h) = self.kinks.as_mut() {
            for &v in a.value.data() {
                h.write_u8((v > S::zero()) as u8);
            }
        }
        let ia = self.id_of(a)?;
        self.push("relu", out, || Op::Relu { a: ia }, &[ia])
    }

    /// Inverted dropout; the identity unless this is a training graph.
    pub fn dropout(&mut self, a: &Var<S>, rate: f64) -> Result<Var<S>> {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(a.clone());
        };
        if rate <= 0.0 {
            return Ok(a.clone());
        }
        let keep = S::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<S> = (0..a.value.len())
            .map(|_| if rng.gen_bool(1.0 - rate) { keep } else { S::zero() })
            .collect();
        let mut out = (*a.value).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        let ia = self.id_of(a)?;
        self.push("dropout", out, || Op::Dropout { a: ia, mask }, &[ia])
    }

    /// Valid (unpadded) convolution of `x: [c_in, t]` with `w: [c_out, c_in, k]`.
    pub fn conv1d(&mut self, x: &Var<S>, w: &Var<S>, stride: usize) -> Result<Var<S>> {
        let (c_in, t) = dims2("conv1d", x)?;
        let [c_out, wc_in, k] = *w.shape() else {
            return Err(NumError::InvalidShape {
                op: "conv1d",
                detail: format!("kernel must be [c_out, c_in, k], got {:?}", w.shape()),
            });
        };
        if wc_in != c_in {
            return Err(NumError::Shape {
                op: "conv1d",
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        if stride == 0 || k == 0 {
            return Err(NumError::Config("conv1d: stride and kernel must be positive".into()));
        }
        if t < k {
            return Err(NumError::InputTooShort { op: "conv1d", len: t, kernel: k });
        }
        let t_out = kernels::conv_out_len(t, k, stride);
        let y = kernels::conv1d_forward(self.exec, x.value.data(), c_in, t, w.value.data(), c_out, k, stride);
        let out = Tensor::new(vec![c_out, t_out], y)?;
        let (ix, iw) = (self.id_of(x)?, self.id_of(w)?);
        self.push("conv1d", out, || Op::Conv1d { x: ix, w: iw, stride }, &[ix, iw])
    }

    pub fn slice_cols(&mut self, a: &Var<S>, start: usize, len: usize) -> Result<Var<S>> {
        let (m, n) = dims2("slice_cols", a)?;
        if start + len > n {
            return Err(NumError::InvalidShape {
                op: "slice_cols",
                detail: format!("columns {start}..{} out of {n}", start + len),
            });
        }
        let src = a.value.data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let out = Tensor::new(vec![m, len], out)?;
        let ia = self.id_of(a)?;
        self.push("slice_cols", out, || Op::SliceCols { a: ia, start }, &[ia])
    }

    pub fn concat_cols(&mut self, parts: &[&Var<S>]) -> Result<Var<S>> {
        let first = parts.first().ok_or(NumError::Empty { op: "concat_cols" })?;
        let (m, _) = dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = dims2("concat_cols", p)?;
            if pm != m {
                return Err(NumError::Shape {
                    op: "concat_cols",
                    left: first.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.value.data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(vec![m, total], out)?;
        let ids = parts.iter().map(|p| self.id_of(p)).collect::<Result<Vec<_>>>()?;
        let ids2 = ids.clone();
        self.push("concat_cols", out, move || Op::ConcatCols { parts: ids2 }, &ids)
    }

    /// Mean over rows: `[n, d] -> [1, d]`.
    pub fn mean_rows(&mut self, a: &Var<S>) -> Result<Var<S>> {
        let (m, n) = dims2("mean_rows", a)?;
        if m == 0 {
            return Err(NumError::Empty { op: "mean_rows" });
        }
        let mut out = vec![S::zero(); n];
        for r in 0..m {
            for (o, &v) in out.iter_mut().zip(a.value.row(r)) {
                *o += v;
            }
        }
        let inv = S::one() / S::from_f64(m as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let out = Tensor::new(vec![1, n], out)?;
        let ia = self.id_of(a)?;
        self.push("mean_rows", out, || Op::MeanRows { a: ia }, &[ia])
    }

    /// Linearly interpolates `[n_in, d]` onto `n_out` rows (see [`kernels::resample_taps`]).
    pub fn resample_rows(&mut self, a: &Var<S>, n_out: usize) -> Result<Var<S>> {
        let (n_in, d) = dims2("resample_rows", a)?;
        if n_in == 0 || n_out == 0 {
            return Err(NumError::Empty { op: "resample_rows" });
        }
        let src = a.value.data();
        let mut out = vec![S::zero(); n_out * d];
        for (j, (i0, i1, f)) in kernels::resample_taps(n_in, n_out).into_iter().enumerate() {
            let (w0, w1) = (S::from_f64(1.0 - f), S::from_f64(f));
            for c in 0..d {
                out[j * d + c] = w0 * src[i0 * d + c] + w1 * src[i1 * d + c];
            }
        }
        let out = Tensor::new(vec![n_out, d], out)?;
        let ia = self.id_of(a)?;
        self.push("resample_rows", out, || Op::ResampleRows { a: ia }, &[ia])
    }

    /// Overwrites the listed rows of `x: [n, d]` with the vector `v` (`d` values).
    pub fn replace_rows(&mut self, x: &Var<S>, v: &Var<S>, rows: &[usize]) -> Result<Var<S>> {
        let (n, d) = dims2("replace_rows", x)?;
        if v.value.len() != d {
            return Err(NumError::Shape {
                op: "replace_rows",
                left: x.shape().to_vec(),
                right: v.shape().to_vec(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(NumError::InvalidShape {
                op: "replace_rows",
                detail: format!("row {bad} out of {n}"),
            });
        }
        let mut out = (*x.value).clone();
        for &r in rows {
            out.data_mut()[r * d..(r + 1) * d].copy_from_slice(v.value.data());
        }
        let (ix, iv) = (self.id_of(x)?, self.id_of(v)?);
        let rows = rows.to_vec();
        self.push("replace_rows", out, move || Op::ReplaceRows { x: ix, v: iv, rows }, &[ix, iv])
    }

    /// Pointwise channel mixer: `sum_c w[c] * parts[c]`.
    pub fn channel_mix(&mut self, parts: &[&Var<S>], w: &Var<S>) -> Result<Var<S>> {
        let first = parts.first().ok_or(NumError::Empty { op: "channel_mix" })?;
        if w.value.len() != parts.len() {
            return Err(NumError::Shape {
                op: "channel_mix",
                left: vec![parts.len()],
                right: w.shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(first.shape());
        for (p, &wc) in parts.iter().zip(w.value.data()) {
            if p.shape() != first.shape() {
                return Err(NumError::Shape {
                    op: "channel_mix",
                    left: first.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            for (o, &v) in out.data_mut().iter_mut().zip(p.value.data()) {
                *o += wc * v;
            }
        }
        let ids = parts.iter().map(|p| self.id_of(p)).collect::<Result<Vec<_>>>()?;
        let iw = self.id_of(w)?;
        let mut inputs = ids.clone();
        inputs.push(iw);
        self.push("channel_mix", out, move || Op::ChannelMix { parts: ids, w: iw }, &inputs)
    }

    /// Mean softmax cross-entropy of `[b, c]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: &Var<S>, labels: &[usize]) -> Result<Var<S>> {
        let (b, c) = dims2("cross_entropy", logits)?;
        if labels.len() != b {
            return Err(NumError::Shape {
                op: "cross_entropy",
                left: logits.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if b == 0 {
            return Err(NumError::Empty { op: "cross_entropy" });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(NumError::Label { op: "cross_entropy", row, label });
        }
        ensure_finite("cross_entropy", &logits.value)?;
        let probs = kernels::softmax_rows(logits.value.data(), b, c);
        let mut loss = S::zero();
        for (r, &l) in labels.iter().enumerate() {
            // log-sum-exp form keeps saturated rows exact
            let row = logits.value.row(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
            loss += lse - row[l];
        }
        loss /= S::from_f64(b as f64);
        let il = self.id_of(logits)?;
        let labels = labels.to_vec();
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            move || Op::CrossEntropy { logits: il, labels, probs },
            &[il],
        )
    }

    /// Mean squared error over the listed rows only; an empty row set gives 0.
    pub fn masked_mse(&mut self, pred: &Var<S>, target: Tensor<S>, rows: &[usize]) -> Result<Var<S>> {
        let (n, d) = dims2("masked_mse", pred)?;
        if target.shape() != pred.shape() {
            return Err(NumError::Shape {
                op: "masked_mse",
                left: pred.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(NumError::InvalidShape {
                op: "masked_mse",
                detail: format!("row {bad} out of {n}"),
            });
        }
        let mut loss = S::zero();
        for &r in rows {
            for (&p, &t) in pred.value.row(r).iter().zip(target.row(r)) {
                loss += (p - t) * (p - t);
            }
        }
        if !rows.is_empty() {
            loss /= S::from_f64((rows.len() * d) as f64);
        }
        let ip = self.id_of(pred)?;
        let rows = rows.to_vec();
        let target = Arc::new(target);
        self.push("masked_mse", Tensor::scalar(loss), move || Op::MaskedMse { pred: ip, target, rows }, &[ip])
    }

    /// Mean squared error over every element.
    pub fn mse(&mut self, pred: &Var<S>, target: Tensor<S>) -> Result<Var<S>> {
        let (n, _) = dims2("mse", pred)?;
        let rows: Vec<usize> = (0..n).collect();
        self.masked_mse(pred, target, &rows)
    }

    /// Records an operation whose value the caller computed and whose
    /// gradient rule is supplied as a closure.
    pub fn custom(&mut self, name: &'static str, inputs: &[&Var<S>], value: Tensor<S>, backward: CustomBackward<S>) -> Result<Var<S>> {
        let ids = inputs.iter().map(|p| self.id_of(p)).collect::<Result<Vec<_>>>()?;
        let ids2 = ids.clone();
        self.push(name, value, move || Op::Custom { inputs: ids2, backward }, &ids)
    }

    /// Gradients of the single-element `loss` with respect to every bound parameter.
    pub fn backward(&self, loss: &Var<S>) -> Result<Gradients<S>> {
        if !self.recording {
            return Err(NumError::NotRecording);
        }
        let root = self.id_of(loss)?;
        if loss.value.len() != 1 {
            return Err(NumError::InvalidShape {
                op: "backward",
                detail: format!("loss must be a scalar, got shape {:?}", loss.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Option<Tensor<S>>> = (0..self.params.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.shape(), S::one()));

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let val = |i: usize| -> &Tensor<S> { &self.nodes[i].value };
            let emit = |grads: &mut Vec<Option<Tensor<S>>>, i: usize, t: Tensor<S>| {
                if !self.requires(i) {
                    return;
                }
                match grads[i].as_mut() {
                    Some(acc) => acc.add_assign(&t),
                    None => grads[i] = Some(t),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => match param_grads[pid.0].as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => param_grads[pid.0] = Some(g),
                },
                Op::MatMul { a, b, ta, tb, alpha } => {
                    let (av, bv) = (val(*a), val(*b));
                    let (ar, ac) = (av.shape()[0], av.shape()[1]);
                    let (br, bc) = (bv.shape()[0], bv.shape()[1]);
                    let opa = MatView::row_major(av.data(), ar, ac).t_if(*ta);
                    let opb = MatView::row_major(bv.data(), br, bc).t_if(*tb);
                    let gv = MatView::row_major(g.data(), opa.rows, opb.cols);
                    if self.requires(*a) {
                        let mut da = vec![S::zero(); ar * ac];
                        if *ta {
                            kernels::gemm(self.exec, *alpha, opb, gv.t(), S::zero(), &mut da);
                        } else {
                            kernels::gemm(self.exec, *alpha, gv, opb.t(), S::zero(), &mut da);
                        }
                        emit(&mut grads, *a, Tensor::new(vec![ar, ac], da)?);
                    }
                    if self.requires(*b) {
                        let mut db = vec![S::zero(); br * bc];
                        if *tb {
                            kernels::gemm(self.exec, *alpha, gv.t(), opa, S::zero(), &mut db);
                        } else {
                            kernels::gemm(self.exec, *alpha, opa.t(), gv, S::zero(), &mut db);
                        }
                        emit(&mut grads, *b, Tensor::new(vec![br, bc], db)?);
                    }
                }
                Op::Add { a, b } => {
                    emit(&mut grads, *b, g.clone());
                    emit(&mut grads, *a, g);
                }
                Op::AddRow { a, bias } => {
                    let n = *g.shape().last().unwrap_or(&1);
                    let mut db = vec![S::zero(); n];
                    for chunk in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    emit(&mut grads, *bias, Tensor::new(val(*bias).shape().to_vec(), db)?);
                    emit(&mut grads, *a, g);
                }
                Op::Scale { a, c } => emit(&mut grads, *a, g.map(|v| v * *c)),
                Op::Transpose { a } => emit(&mut grads, *a, g.transpose2()?),
                Op::Reshape { a } => emit(&mut grads, *a, g.reshape(val(*a).shape().to_vec())?),
                Op::SoftmaxRows { a } => {
                    let (m, n) = (g.shape()[0], g.shape()[1]);
                    let dx = kernels::softmax_rows_backward(node.value.data(), g.data(), m, n);
                    emit(&mut grads, *a, Tensor::new(vec![m, n], dx)?);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gam = val(*gamma);
                    let d = gam.len();
                    let (dx, dg, db) = kernels::layer_norm_backward(g.data(), xhat, inv_std, gam.data(), d);
                    emit(&mut grads, *gamma, Tensor::new(gam.shape().to_vec(), dg)?);
                    emit(&mut grads, *beta, Tensor::new(val(*beta).shape().to_vec(), db)?);
                    emit(&mut grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
                }
                Op::Gelu { a } => {
                    let x = val(*a);
                    let mut dx = g;
                    for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                        *d *= kernels::gelu_grad(xv);
                    }
                    emit(&mut grads, *a, dx);
                }
                Op::Relu { a } => {
                    let x = val(*a);
                    let mut dx = g;
                    for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                        if xv <= S::zero() {
                            *d = S::zero();
                        }
                    }
                    emit(&mut grads, *a, dx);
                }
                Op::Dropout { a, mask } => {
                    let mut dx = g;
                    for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    emit(&mut grads, *a, dx);
                }
                Op::Conv1d { x, w, stride } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let (c_in, t) = (xv.shape()[0], xv.shape()[1]);
                    let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
                    let (dx, dw) = kernels::conv1d_backward(
                        xv.data(),
                        c_in,
                        t,
                        wv.data(),
                        c_out,
                        k,
                        *stride,
                        g.data(),
                        self.requires(*x),
                    );
                    emit(&mut grads, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                    if let Some(dx) = dx {
                        emit(&mut grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                    }
                }
                Op::SliceCols { a, start } => {
                    let av = val(*a);
                    let (m, n) = (av.shape()[0], av.shape()[1]);
                    let len = g.shape()[1];
                    let mut dx = vec![S::zero(); m * n];
                    for r in 0..m {
                        dx[r * n + start..r * n + start + len].copy_from_slice(g.row(r));
                    }
                    emit(&mut grads, *a, Tensor::new(vec![m, n], dx)?);
                }
                Op::ConcatCols { parts } => {
                    let m = g.shape()[0];
                    let total = g.shape()[1];
                    let mut off = 0;
                    for &p in parts {
                        let w = val(p).shape()[1];
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        emit(&mut grads, p, Tensor::new(vec![m, w], dp)?);
                        off += w;
                    }
                }
                Op::MeanRows { a } => {
                    let (m, n) = (val(*a).shape()[0], val(*a).shape()[1]);
                    let inv = S::one() / S::from_f64(m as f64);
                    let row: Vec<S> = g.data().iter().map(|&v| v * inv).collect();
                    let mut dx = Vec::with_capacity(m * n);
                    for _ in 0..m {
                        dx.extend_from_slice(&row);
                    }
                    emit(&mut grads, *a, Tensor::new(vec![m, n], dx)?);
                }
                Op::ResampleRows { a } => {
                    let (n_in, d) = (val(*a).shape()[0], val(*a).shape()[1]);
                    let n_out = g.shape()[0];
                    let mut dx = vec![S::zero(); n_in * d];
                    for (j, (i0, i1, f)) in kernels::resample_taps(n_in, n_out).into_iter().enumerate() {
                        let (w0, w1) = (S::from_f64(1.0 - f), S::from_f64(f));
                        for c in 0..d {
                            let gv = g.data()[j * d + c];
                            dx[i0 * d + c] += w0 * gv;
                            dx[i1 * d + c] += w1 * gv;
                        }
                    }
                    emit(&mut grads, *a, Tensor::new(vec![n_in, d], dx)?);
                }
                Op::ReplaceRows { x, v, rows } => {
                    let d = g.shape()[1];
                    let mut dv = vec![S::zero(); d];
                    let mut dx = g;
                    for &r in rows {
                        let row = &mut dx.data_mut()[r * d..(r + 1) * d];
                        for (acc, gv) in dv.iter_mut().zip(row.iter_mut()) {
                            *acc += *gv;
                            *gv = S::zero();
                        }
                    }
                    emit(&mut grads, *v, Tensor::new(val(*v).shape().to_vec(), dv)?);
                    emit(&mut grads, *x, dx);
                }
                Op::ChannelMix { parts, w } => {
                    let wv = val(*w);
                    let mut dw = vec![S::zero(); parts.len()];
                    for (c, &p) in parts.iter().enumerate() {
                        dw[c] = g.data().iter().zip(val(p).data()).map(|(&a, &b)| a * b).sum();
                        emit(&mut grads, p, g.map(|v| v * wv.data()[c]));
                    }
                    emit(&mut grads, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let lv = val(*logits);
                    let (b, c) = (lv.shape()[0], lv.shape()[1]);
                    let scale = g.data()[0] / S::from_f64(b as f64);
                    let mut dx = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        dx[r * c + l] -= S::one();
                    }
                    dx.iter_mut().for_each(|v| *v *= scale);
                    emit(&mut grads, *logits, Tensor::new(vec![b, c], dx)?);
                }
                Op::MaskedMse { pred, target, rows } => {
                    let pv = val(*pred);
                    let d = pv.shape()[1];
                    let mut dx = Tensor::zeros(pv.shape());
                    if !rows.is_empty() {
                        let scale = g.data()[0] * S::from_f64(2.0 / (rows.len() * d) as f64);
                        for &r in rows {
                            for c in 0..d {
                                let i = r * d + c;
                                dx.data_mut()[i] = scale * (pv.data()[i] - target.data()[i]);
                            }
                        }
                    }
                    emit(&mut grads, *pred, dx);
                }
                Op::Custom { inputs, backward } => {
                    let vals: Vec<&Tensor<S>> = inputs.iter().map(|&i| val(i)).collect();
                    let gs = backward(&g, &vals);
                    for (&i, gi) in inputs.iter().zip(gs) {
                        emit(&mut grads, i, gi);
                    }
                }
            }
        }
        Ok(Gradients::new(param_grads))
    }
}
