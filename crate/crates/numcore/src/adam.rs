use crate::error::{NumError, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.v[index]
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One bias-corrected Adam update; gradients are zeroed afterwards.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(NumError::Config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        if let Some(p) = store.params_mut().iter().find(|p| p.grad.is_none()) {
            return Err(NumError::UninitializedGrad { name: p.name.clone() });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let grad = p.grad.as_mut().expect("checked above");
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((w, g), mi), vi) in p.value.data_mut().iter_mut().zip(grad.data_mut()).zip(m).zip(v) {
                let gv = *g as f64;
                let m_new = beta1 * *mi as f64 + (1.0 - beta1) * gv;
                let v_new = beta2 * *vi as f64 + (1.0 - beta2) * gv * gv;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let update = lr * (m_new / bc1) / ((v_new / bc2).sqrt() + eps);
                *w = (*w as f64 - update) as f32;
                *g = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f32, grad: Option<f32>) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(value)).unwrap();
        s.get_mut(id).grad = grad.map(Tensor::scalar);
        s
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut s = store_with(0.3, Some(0.0));
        let mut st = AdamState::new(&s, AdamConfig::default());
        st.step(&mut s).unwrap();
        assert_eq!(s.get(crate::ParamId(0)).value.data()[0], 0.3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store_with(1.0, Some(1.0));
        let mut st = AdamState::new(&s, AdamConfig { lr: 0.1, ..Default::default() });
        st.step(&mut s).unwrap();
        let w = s.get(crate::ParamId(0)).value.data()[0];
        assert!((w - 0.9).abs() < 1e-6, "{w}");
        // gradient zeroed, not removed
        assert_eq!(s.get(crate::ParamId(0)).grad.as_ref().unwrap().data()[0], 0.0);
    }

    #[test]
    fn two_steps_follow_recurrence() {
        let mut s = store_with(0.0, Some(0.5));
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let mut st = AdamState::new(&s, cfg);
        st.step(&mut s).unwrap();
        s.get_mut(crate::ParamId(0)).grad = Some(Tensor::scalar(0.5));
        st.step(&mut s).unwrap();
        assert_eq!(st.step_count(), 2);
        // m1 = 0.05, m2 = 0.9*0.05 + 0.05 = 0.095; v1 = 2.5e-4, v2 = 0.999*2.5e-4 + 2.5e-4
        let m2 = 0.095f64;
        let v2 = 0.999 * 2.5e-4 + 2.5e-4;
        assert!((st.first_moment(0).data()[0] as f64 - m2).abs() < 1e-7);
        assert!((st.second_moment(0).data()[0] as f64 - v2).abs() < 1e-9);
        // both bias-corrected ratios equal 1 for a constant gradient
        let w = s.get(crate::ParamId(0)).value.data()[0] as f64;
        assert!((w + 0.02).abs() < 1e-6, "{w}");
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store_with(1.0, None);
        let mut st = AdamState::new(&s, AdamConfig::default());
        assert!(matches!(st.step(&mut s), Err(NumError::UninitializedGrad { .. })));
        assert_eq!(st.step_count(), 0);
    }
}
