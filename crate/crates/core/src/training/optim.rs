use crate::models::FusionModel;
use crate::scalar::Scalar;

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients. Parameters that
    /// received no gradient are left alone.
    pub fn step(&mut self, model: &mut FusionModel<T>) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let correction1 = 1.0 - self.beta1.powi(self.step);
        let correction2 = 1.0 - self.beta2.powi(self.step);
        let step_size = T::lit(self.learning_rate / correction1);
        let root_c2 = T::lit(correction2.sqrt());
        let eps = T::lit(self.epsilon);
        let mut k = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        model.visit_params_mut(&mut |_, p| {
            if !p.is_trainable() {
                return;
            }
            if first.len() <= k {
                first.push(vec![T::zero(); p.value.len()]);
                second.push(vec![T::zero(); p.value.len()]);
            }
            let (m, v) = (&mut first[k], &mut second[k]);
            k += 1;
            if p.grad().is_empty() {
                return;
            }
            let grad = p.grad().to_vec();
            for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                *w -= step_size * *mi / (vi.sqrt() / root_c2 + eps);
            }
        });
    }
}
