//! Rectified Adam, with plain Adam available for ablation.
//!
//! State is kept per parameter name, so parameters that join training
//! late (a head entering its task) start from fresh moments, and frozen
//! parameters simply stop receiving updates.

use std::collections::HashMap;

use liss_tensor::Scalar;
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    RAdam,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimConfig {
    pub fn new(kind: OptimKind, lr: f64) -> Result<OptimConfig> {
        if lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(OptimConfig {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        })
    }
}

struct ParamState<T: Scalar> {
    m: ArrayD<T>,
    v: ArrayD<T>,
    t: u64,
}

pub struct Optimizer<T: Scalar> {
    cfg: OptimConfig,
    state: HashMap<String, ParamState<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(cfg: OptimConfig) -> Optimizer<T> {
        Optimizer {
            cfg,
            state: HashMap::new(),
        }
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    /// Applies one update to `param` in place. The per-parameter step
    /// count starts at the first update for that name.
    pub fn apply(&mut self, name: &str, param: &mut ArrayD<T>, grad: &ArrayD<T>) {
        debug_assert_eq!(param.shape(), grad.shape());
        let st = self.state.entry(name.to_string()).or_insert_with(|| ParamState {
            m: ArrayD::zeros(param.raw_dim()),
            v: ArrayD::zeros(param.raw_dim()),
            t: 0,
        });
        st.t += 1;
        let t = st.t;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
        let one = T::one();

        // Moment updates.
        ndarray::Zip::from(&mut st.m).and(grad).for_each(|m, &g| {
            *m = *m * b1t + g * (one - b1t);
        });
        ndarray::Zip::from(&mut st.v).and(grad).for_each(|v, &g| {
            *v = *v * b2t + g * g * (one - b2t);
        });

        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);

        match self.cfg.kind {
            OptimKind::Adam => {
                let step = T::from_f64(self.cfg.lr / bias1);
                let inv_sqrt_bias2 = T::from_f64(1.0 / bias2.sqrt());
                let eps = T::from_f64(self.cfg.eps);
                ndarray::Zip::from(param)
                    .and(&st.m)
                    .and(&st.v)
                    .for_each(|p, &m, &v| {
                        *p = *p - step * m / (v.sqrt() * inv_sqrt_bias2 + eps);
                    });
            }
            OptimKind::RAdam => {
                let rho_inf = 2.0 / (1.0 - b2) - 1.0;
                let rho_t =
                    rho_inf - 2.0 * (t as f64) * b2.powi(t as i32) / (1.0 - b2.powi(t as i32));
                if rho_t > 4.0 {
                    let rect = ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                        / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                        .sqrt();
                    let step = T::from_f64(self.cfg.lr * rect / bias1);
                    let inv_sqrt_bias2 = T::from_f64(1.0 / bias2.sqrt());
                    let eps = T::from_f64(self.cfg.eps);
                    ndarray::Zip::from(param)
                        .and(&st.m)
                        .and(&st.v)
                        .for_each(|p, &m, &v| {
                            *p = *p - step * m / (v.sqrt() * inv_sqrt_bias2 + eps);
                        });
                } else {
                    // Variance is untractable early on: un-adapted update.
                    let step = T::from_f64(self.cfg.lr / bias1);
                    ndarray::Zip::from(param).and(&st.m).for_each(|p, &m| {
                        *p = *p - step * m;
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn quadratic_descends(kind: OptimKind) -> f64 {
        // Minimize f(x) = 0.5 * x^2 from x = 1; gradient is x.
        let cfg = OptimConfig::new(kind, 0.05).unwrap();
        let mut opt: Optimizer<f64> = Optimizer::new(cfg);
        let mut x = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        for _ in 0..300 {
            let g = x.clone();
            opt.apply("x", &mut x, &g);
        }
        x[[0]].abs()
    }

    #[test]
    fn both_optimizers_minimize_a_quadratic() {
        assert!(quadratic_descends(OptimKind::Adam) < 0.05);
        assert!(quadratic_descends(OptimKind::RAdam) < 0.05);
    }

    #[test]
    fn radam_early_steps_skip_the_adaptive_term() {
        // With beta2 = 0.999, rho_t stays <= 4 for the first few steps, so
        // the first update must be exactly lr * g-through-momentum-bias,
        // i.e. lr * g regardless of gradient magnitude.
        let cfg = OptimConfig::new(OptimKind::RAdam, 0.01).unwrap();
        let mut opt: Optimizer<f64> = Optimizer::new(cfg);
        for scale in [1.0f64, 1000.0] {
            let mut x = ArrayD::from_elem(IxDyn(&[1]), 0.0);
            let g = ArrayD::from_elem(IxDyn(&[1]), scale);
            opt.apply(&format!("x{scale}"), &mut x, &g);
            // m = (1-b1)*g, bias1 = (1-b1) -> update = lr * g exactly.
            assert!((x[[0]] + 0.01 * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn state_is_per_parameter_name() {
        let cfg = OptimConfig::new(OptimKind::Adam, 0.1).unwrap();
        let mut opt: Optimizer<f64> = Optimizer::new(cfg);
        let g = ArrayD::from_elem(IxDyn(&[1]), 1.0);
        let mut x1 = ArrayD::from_elem(IxDyn(&[1]), 0.0);
        let mut x2 = ArrayD::from_elem(IxDyn(&[1]), 0.0);
        opt.apply("a", &mut x1, &g);
        opt.apply("a", &mut x1, &g);
        opt.apply("b", &mut x2, &g);
        // "b" is at t=1, same as "a" was on its first step.
        let mut fresh: Optimizer<f64> = Optimizer::new(cfg);
        let mut y = ArrayD::from_elem(IxDyn(&[1]), 0.0);
        fresh.apply("a", &mut y, &g);
        assert_eq!(x2[[0]], y[[0]]);
    }

    #[test]
    fn rejects_nonpositive_learning_rate() {
        assert!(OptimConfig::new(OptimKind::RAdam, 0.0).is_err());
    }
}
