//! AdamW optimizer with decoupled weight decay.

use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Optimizer state. First- and second-moment buffers are allocated
/// lazily on the first step so the optimizer can be constructed before
/// the parameter list is final.
pub struct AdamW<T = f32> {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i] == None` means parameter `i` received no
    /// gradient this step and is left untouched by the Adam part
    /// (weight decay still applies).
    pub fn step(
        &mut self,
        names: &[String],
        params: &mut [Tensor<T>],
        grads: &[Option<Tensor<T>>],
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != names.len() {
            return Err(Error::Argument(format!(
                "optimizer given {} params, {} grads, {} names",
                params.len(),
                grads.len(),
                names.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let lr = T::from_f64(self.cfg.lr);
        let eps = T::from_f64(self.cfg.eps);
        let wd = T::from_f64(self.cfg.weight_decay);
        let bc1 = T::one() - T::from_f64(self.cfg.beta1).powi(t);
        let bc2 = T::one() - T::from_f64(self.cfg.beta2).powi(t);

        for (i, p) in params.iter_mut().enumerate() {
            if let Some(g) = &grads[i] {
                if g.shape() != p.shape() {
                    return Err(Error::Optimizer(format!(
                        "gradient shape {:?} does not match parameter '{}' {:?}",
                        g.shape(),
                        names[i],
                        p.shape()
                    )));
                }
                if !g.is_all_finite() {
                    return Err(Error::Optimizer(format!(
                        "non-finite gradient for parameter '{}'",
                        names[i]
                    )));
                }
                let m = self.m[i].data_mut();
                let v = self.v[i].data_mut();
                for (((pv, &gv), mv), vv) in
                    p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
                {
                    *mv = b1 * *mv + (T::one() - b1) * gv;
                    *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                    let mhat = *mv / bc1;
                    let vhat = *vv / bc2;
                    *pv = *pv - lr * (mhat / (vhat.sqrt() + eps));
                }
            }
            if wd != T::zero() {
                for pv in p.data_mut().iter_mut() {
                    *pv = *pv - lr * wd * *pv;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let names = vec!["w".to_string()];
        let mut params = vec![Tensor::<f64>::full(&[3], 1.5)];
        let grads = vec![Some(Tensor::<f64>::zeros(&[3]))];
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, ..Default::default() });
        for _ in 0..5 {
            opt.step(&names, &mut params, &grads).unwrap();
        }
        for &v in params[0].data() {
            assert_eq!(v, 1.5);
        }
    }

    #[test]
    fn descends_on_quadratic() {
        // f(x) = x^2 from x = 1 with small lr: x decreases
        let names = vec!["x".to_string()];
        let mut params = vec![Tensor::<f64>::full(&[1], 1.0)];
        let mut opt = AdamW::new(AdamWConfig { lr: 1e-5, ..Default::default() });
        let g = 2.0 * params[0].data()[0];
        opt.step(&names, &mut params, &[Some(Tensor::scalar(g))]).unwrap();
        assert!(params[0].data()[0] < 1.0);
    }

    #[test]
    fn quadratic_bowl_mostly_monotone() {
        // 200 steps on f(x) = sum(x^2); loss decreases on at least 95% of steps
        let names = vec!["x".to_string()];
        let mut params = vec![Tensor::<f64>::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap()];
        let mut opt = AdamW::new(AdamWConfig { lr: 0.01, ..Default::default() });
        let loss = |p: &Tensor<f64>| -> f64 { p.data().iter().map(|v| v * v).sum() };
        let mut prev = loss(&params[0]);
        let mut down = 0;
        for _ in 0..200 {
            let g = Tensor::new(vec![4], params[0].data().iter().map(|v| 2.0 * v).collect()).unwrap();
            opt.step(&names, &mut params, &[Some(g)]).unwrap();
            let cur = loss(&params[0]);
            if cur < prev {
                down += 1;
            }
            prev = cur;
        }
        assert!(down >= 190, "only {down} of 200 steps decreased");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let names = vec!["dit.block0.w".to_string()];
        let mut params = vec![Tensor::<f32>::zeros(&[2])];
        let bad = Tensor::<f32>::new(vec![2], vec![f32::NAN, 0.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default());
        let err = opt.step(&names, &mut params, &[Some(bad)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dit.block0.w"), "message should name the parameter: {msg}");
    }
}
