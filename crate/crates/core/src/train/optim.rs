use crate::train::config::Optimizer;

/// Adam with bias correction, no weight decay, over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(opt: Optimizer, lr: f64, len: usize) -> Self {
        let Optimizer::Adam { beta1, beta2, eps } = opt;
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            steps: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Updates `params` (any number of slices, concatenated) in place.
    pub fn step<'p>(&mut self, params: impl IntoIterator<Item = &'p mut [f64]>, grads: &[f64]) {
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps);
        let bc2 = 1.0 - self.beta2.powi(self.steps);
        let mut i = 0;
        for slice in params {
            for p in slice.iter_mut() {
                let g = grads[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                i += 1;
            }
        }
        assert_eq!(i, grads.len(), "parameter length mismatch");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(Optimizer::default(), 0.1, 3);
        let mut p = vec![1.0, 1.0, 1.0];
        adam.step([p.as_mut_slice()], &[2.0, -0.5, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 1.1).abs() < 1e-6);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(Optimizer::default(), 0.05, 2);
        let mut a = vec![3.0];
        let mut b = vec![-2.0];
        for _ in 0..2000 {
            let g = [2.0 * (a[0] - 1.0), 2.0 * (b[0] + 0.5)];
            adam.step([a.as_mut_slice(), b.as_mut_slice()], &g);
        }
        assert!((a[0] - 1.0).abs() < 1e-3);
        assert!((b[0] + 0.5).abs() < 1e-3);
    }
}
