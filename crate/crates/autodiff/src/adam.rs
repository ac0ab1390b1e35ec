use crate::error::{AutodiffError, Result};
use crate::nn::Parameterized;

/// Adam with bias correction. Moment buffers are created on the first step,
/// one per visited tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update using the gradients stored on `params`. Tensors
    /// without a gradient are treated as having zero gradient.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P) -> Result<()> {
        let mut bad = None;
        let mut lens = Vec::new();
        params.visit(&mut |name, t| {
            lens.push(t.numel());
            if bad.is_none() {
                if let Some(g) = t.grad() {
                    if g.iter().any(|x| !x.is_finite()) {
                        bad = Some(name.to_string());
                    }
                }
            }
        });
        if let Some(name) = bad {
            return Err(AutodiffError::NonFiniteGradient(name));
        }
        if self.m.is_empty() {
            self.m = lens.iter().map(|&n| vec![0.0; n]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != lens.len() || self.m.iter().zip(&lens).any(|(m, &n)| m.len() != n) {
            let mut first = String::new();
            params.visit(&mut |name, _| {
                if first.is_empty() {
                    first = name.to_string()
                }
            });
            return Err(AutodiffError::OptimizerMismatch(first));
        }

        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.lr, self.eps);
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |_, t| {
            let m = &mut ms[idx];
            let v = &mut vs[idx];
            idx += 1;
            let Some(g) = t.grad().map(|g| g.to_vec()) else {
                // zero gradient still decays the moments
                for i in 0..m.len() {
                    m[i] *= b1;
                    v[i] *= b2;
                }
                apply(t.data_mut(), m, v, c1, c2, lr, eps);
                return;
            };
            for i in 0..m.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            }
            apply(t.data_mut(), m, v, c1, c2, lr, eps);
        });
        Ok(())
    }
}

fn apply(p: &mut [f64], m: &[f64], v: &[f64], c1: f64, c2: f64, lr: f64, eps: f64) {
    for i in 0..p.len() {
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        p[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    struct One(Tensor);

    impl Parameterized for One {
        fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("w", &self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("w", &mut self.0)
        }
    }

    #[test]
    fn default_epsilon() {
        assert_eq!(Adam::new(1e-3).eps, 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = One(Tensor::vector(vec![0.5, -1.5]));
        p.0.set_grad(vec![0.0, 0.0]).unwrap();
        let mut opt = Adam::new(0.1);
        opt.step(&mut p).unwrap();
        assert_eq!(p.0.data(), &[0.5, -1.5]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn unit_gradient_moves_by_learning_rate() {
        // m_1 = 0.1, v_1 = 0.001; bias-corrected both equal 1.
        let mut p = One(Tensor::scalar(0.0));
        let mut opt = Adam::new(0.01);
        let mut prev = 0.0;
        for step in 1..=3 {
            p.0.set_grad(vec![1.0]).unwrap();
            opt.step(&mut p).unwrap();
            let delta = prev - p.0.item();
            assert!((delta - 0.01 / (1.0 + 1e-8)).abs() < 1e-12, "step {step}: {delta}");
            prev = p.0.item();
        }
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn nan_gradient_rejected_by_name() {
        let mut p = One(Tensor::vector(vec![1.0]));
        p.0.set_grad(vec![f64::NAN]).unwrap();
        let mut opt = Adam::new(0.1);
        let err = opt.step(&mut p).unwrap_err();
        assert_eq!(err, AutodiffError::NonFiniteGradient("w".into()));
        assert_eq!(p.0.data(), &[1.0]);
        assert_eq!(opt.steps(), 0);
    }
}
