use ndarray::{Array2, Zip};

use super::{ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    step: i32,
    first: Vec<Array2<T>>,
    second: Vec<Array2<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_lr(lr: f64) -> Self {
        Self::new(AdamConfig { lr, ..AdamConfig::default() })
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update using the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        if self.first.len() != store.len() {
            self.first = store.iter().map(|p| Array2::zeros(p.value.dim())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let corr1 = T::of(1.0 - c.beta1.powi(self.step));
        let corr2 = T::of(1.0 - c.beta2.powi(self.step));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let grad = store.grad(id).clone();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            Zip::from(&mut *m).and(&mut *v).and(&grad).for_each(|m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
            });
            Zip::from(store.value_mut(id)).and(&*m).and(&*v).for_each(|w, &m, &v| {
                let m_hat = m / corr1;
                let v_hat = v / corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Init, Tape};
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut store = ParamStore::<f64>::new(1);
        let id = store.register("w", 2, 2, Init::XavierUniform).unwrap();
        let before = store.value(id).clone();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store);
        assert_eq!(store.value(id), &before);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let mut store = ParamStore::<f64>::new(1);
        let id = store.register("w", 1, 3, Init::Zeros).unwrap();
        *store.grad_mut(id) = array![[2.0, -0.5, 0.0]];
        let mut adam = Adam::with_lr(0.1);
        adam.step(&mut store);
        let w = store.value(id);
        assert!(w[[0, 0]] < 0.0);
        assert!(w[[0, 1]] > 0.0);
        assert_eq!(w[[0, 2]], 0.0);
        // First bias-corrected step has magnitude ≈ lr.
        assert!((w[[0, 0]] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = Σ (w - c)^2, argmin w = c.
        let target = array![[0.5, -0.5, 0.25]];
        let mut store = ParamStore::<f64>::new(3);
        let id = store.register("w", 1, 3, Init::Zeros).unwrap();
        let mut adam = Adam::with_lr(0.09);
        for _ in 0..100 {
            let mut t = Tape::new();
            let w = t.param(&store, id).unwrap();
            let c = t.constant(target.clone()).unwrap();
            let d = t.sub(w, c).unwrap();
            let sq = t.elementwise_mul(d, d).unwrap();
            let loss = t.sum_all(sq).unwrap();
            t.backward_into(loss, &mut store).unwrap();
            adam.step(&mut store);
        }
        for (w, c) in store.value(id).iter().zip(target.iter()) {
            assert!((w - c).abs() < 1e-3, "w {w} c {c}");
        }
    }
}
