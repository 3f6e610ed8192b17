//! Central finite-difference verification of analytic gradients.
//!
//! Both the analytic gradient and the finite differences are evaluated on a
//! 64-bit shadow copy of the parameters, so the comparison measures the
//! backward rules rather than `f32` rounding.
//!
//! A difference whose two evaluations fall on different sides of a ReLU kink
//! is not an estimate of the derivative. Such elements are re-measured with
//! the step shrunk tenfold (up to three times); if the kink is still inside
//! the bracket, the one-sided difference on the unperturbed side is used.

use crate::error::{NumError, Result};
use crate::graph::{Graph, Var};
use crate::par::{self, Execution};
use crate::param::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub rel_tol: f64,
    /// Gradient magnitudes below this are compared on this scale instead,
    /// so near-zero entries are judged by absolute error `rel_tol * floor`.
    pub magnitude_floor: f64,
    /// Checks at most this many evenly spaced elements per parameter.
    pub max_elements: Option<usize>,
    pub exec: Execution,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            rel_tol: 1e-3,
            magnitude_floor: 1e-3,
            max_elements: None,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Element index, analytic and numeric value at the worst element.
    pub worst: Option<(usize, f64, f64)>,
    /// Elements whose step was shrunk because it straddled a ReLU kink.
    pub kink_adjusted: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub loss: f64,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    /// Fixed-width table, one parameter per line.
    pub fn table(&self) -> String {
        let width = self.params.iter().map(|p| p.name.len()).max().unwrap_or(4).max(9);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>6}  {:>12}  result\n",
            "parameter", "checked", "kinks", "max_rel_err"
        );
        for p in &self.params {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>6}  {:>12.3e}  {}\n",
                p.name,
                p.checked,
                p.kink_adjusted,
                p.max_rel_error,
                if p.passed { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

const KINK_RETRIES: usize = 3;

fn sample_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n && m > 0 => (0..m).map(|i| i * n / m).collect(),
        _ => (0..n).collect(),
    }
}

/// Compares the analytic gradient of `loss_fn` with central differences for
/// every parameter in `store`. `loss_fn` must build a single-element loss and
/// must be deterministic; it is called on non-training graphs only.
pub fn gradcheck<F>(store: &ParamStore, cfg: &GradcheckConfig, loss_fn: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var<f64>> + Sync,
{
    let values = store.values::<f64>();
    let eval = |perturb: Option<(ParamId, usize, f64)>| -> Result<(f64, Option<u64>)> {
        let mut g = Graph::inference(values.clone())
            .with_execution(Execution::Sequential)
            .with_kink_tracking();
        if let Some((id, idx, delta)) = perturb {
            g = g.with_perturbation(id, idx, delta);
        }
        let loss = loss_fn(&mut g)?.item();
        Ok((loss, g.kink_signature()))
    };

    let (first, base) = eval(None)?;
    let (second, _) = eval(None)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumError::Determinism { first, second });
    }
    let mut graph = Graph::recording(values.clone()).with_execution(Execution::Sequential);
    let loss = loss_fn(&mut graph)?;
    if loss.item().to_bits() != first.to_bits() {
        return Err(NumError::Determinism { first, second: loss.item() });
    }
    let grads = graph.backward(&loss)?;

    let mut tasks = Vec::new();
    for (id, p) in store.iter() {
        for idx in sample_indices(p.value.len(), cfg.max_elements) {
            tasks.push((id, idx));
        }
    }
    let numeric = par::map_slice(cfg.exec, &tasks, |&(id, idx)| -> Result<(f64, bool)> {
        let mut h = cfg.step;
        for attempt in 0..=KINK_RETRIES {
            let (plus, sp) = eval(Some((id, idx, h)))?;
            let (minus, sm) = eval(Some((id, idx, -h)))?;
            let adjusted = attempt > 0;
            if sp == base && sm == base {
                return Ok(((plus - minus) / (2.0 * h), adjusted));
            }
            if attempt == KINK_RETRIES {
                return Ok(match (sp == base, sm == base) {
                    (true, _) => ((plus - first) / h, true),
                    (_, true) => ((first - minus) / h, true),
                    _ => ((plus - minus) / (2.0 * h), adjusted),
                });
            }
            h /= 10.0;
        }
        unreachable!("loop returns on its last attempt")
    });

    let mut params: Vec<ParamCheck> = store
        .iter()
        .map(|(_, p)| ParamCheck {
            name: p.name.clone(),
            elements: p.value.len(),
            checked: 0,
            max_rel_error: 0.0,
            worst: None,
            kink_adjusted: 0,
            passed: true,
        })
        .collect();
    for (&(id, idx), num) in tasks.iter().zip(numeric) {
        let (num, adjusted) = num?;
        let ana = grads.get(id).map_or(0.0, |g| g.data()[idx]);
        let scale = ana.abs().max(num.abs()).max(cfg.magnitude_floor);
        let err = (ana - num).abs() / scale;
        let entry = &mut params[id.0];
        entry.checked += 1;
        entry.kink_adjusted += adjusted as usize;
        if err > entry.max_rel_error || entry.worst.is_none() {
            entry.max_rel_error = err;
            entry.worst = Some((idx, ana, num));
        }
        if !(err <= cfg.rel_tol) {
            entry.passed = false;
        }
    }
    Ok(GradcheckReport { loss: first, params })
}
