use super::{NumericsError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay.
///
/// Weight decay only touches variables whose `decay` flag is set and is
/// applied to the parameter directly, never through the gradient.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, v)| Tensor::zeros(v.value.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// Restores accumulators, e.g. from a checkpoint.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Result<(), NumericsError> {
        let conforms = |saved: &[Tensor]| {
            saved.len() == self.first.len() && saved.iter().zip(&self.first).all(|(a, b)| a.shape() == b.shape())
        };
        if !conforms(&first) || !conforms(&second) {
            return Err(NumericsError::Snapshot("adam moments do not match parameters".into()));
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NumericsError> {
        if store.is_empty() {
            return Ok(());
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let var = store.get_mut(id);
            if !var.trainable {
                continue;
            }
            let decay = if var.decay { weight_decay } else { 0.0 };
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let grad = var.grad.data();
            let value = var.value.data_mut();
            for j in 0..value.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                value[j] -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * value[j]);
            }
            if !var.value.is_finite() {
                return Err(NumericsError::NonFinite { op: "adam_step" });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![value]).unwrap());
        store.get_mut(id).grad = Tensor::vector(vec![grad]).unwrap();
        store
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = single(0.3, 1.0);
        let config = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(config, &store);
        adam.step(&mut store).unwrap();
        let delta = store.value(store.find("p").unwrap()).data()[0] - 0.3;
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        assert!((delta + 1e-5).abs() < 1e-12, "delta {delta}");
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_or_zero_lr_is_identity() {
        let mut store = single(0.7, 0.0);
        let mut adam = AdamState::new(
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.iter().next().unwrap().1.value.data()[0], 0.7);

        let mut store = single(0.7, 3.0);
        let mut adam = AdamState::new(
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            &store,
        );
        adam.step(&mut store).unwrap();
        assert_eq!(store.iter().next().unwrap().1.value.data()[0], 0.7);
    }

    #[test]
    fn decay_flag_controls_weight_decay() {
        let mut store = single(1.0, 0.0);
        let id = store.find("p").unwrap();
        let config = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(config, &store);
        adam.step(&mut store).unwrap();
        assert!((store.value(id).data()[0] - 0.95).abs() < 1e-15);
        store.get_mut(id).decay = false;
        adam.step(&mut store).unwrap();
        assert!((store.value(id).data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn empty_store_is_noop() {
        let mut store = ParamStore::new();
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.step(&mut store).unwrap();
        assert_eq!(adam.step_count(), 0);
    }
}
