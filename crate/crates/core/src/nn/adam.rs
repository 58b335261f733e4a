use super::{Param, Scalar};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients. The parameter list
    /// must come in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let one = T::one();
        let c1 = T::from_f64(1.0 - self.beta1.powi(self.step));
        let c2 = T::from_f64(1.0 - self.beta2.powi(self.step));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.value[i] = p.value[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Param::<f64>::zeros("w", vec![3]);
        p.grad = vec![2.0, -0.5, 0.0];
        let mut opt = Adam::new(0.1);
        opt.step(&mut [&mut p]);
        assert!((p.value[0] + 0.1).abs() < 1e-6);
        assert!((p.value[1] - 0.1).abs() < 1e-6);
        assert_eq!(p.value[2], 0.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::<f64>::zeros("w", vec![2]);
        p.value = vec![3.0, -4.0];
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            p.grad = p.value.iter().map(|x| 2.0 * (x - 1.0)).collect();
            opt.step(&mut [&mut p]);
        }
        assert!(p.value.iter().all(|x| (x - 1.0).abs() < 1e-3));
    }
}
