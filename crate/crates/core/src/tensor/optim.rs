use super::{ParamKind, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment gradient descent with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f64> {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.iter().map(|(_, t, _)| vec![T::zero(); t.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. Gradients are left
    /// in place; zero them before the next accumulation.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = T::from_f64(lr / bc1);
        let bc2_sqrt = T::from_f64(bc2.sqrt());
        let eps = T::from_f64(c.eps);
        let one = T::one();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.kind(id) != ParamKind::Trainable {
                continue;
            }
            let k = id.0;
            let t = store.tensor_mut(id);
            let Some(g) = t.grad().map(<[T]>::to_vec) else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((p, &gi), mi), vi) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *p -= step_size * *mi / ((*vi).sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .insert("p", Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap(), ParamKind::Trainable)
            .unwrap();
        store.tensor_mut(id).accumulate_grad(&[0.5, -3.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store, 0.1);
        let v = store.tensor(id).data();
        // Bias-corrected first step is lr·sign(g) up to eps.
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("p", Tensor::full(&[3], 5.0), ParamKind::Trainable).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..2000 {
            store.zero_grad();
            let g: Vec<f64> = store.tensor(id).data().iter().map(|&x| 2.0 * (x - 1.0)).collect();
            store.tensor_mut(id).accumulate_grad(&g).unwrap();
            adam.step(&mut store, 0.05);
        }
        assert!(store.tensor(id).data().iter().all(|&x| (x - 1.0).abs() < 1e-3));
    }
}
