use serde::{Deserialize, Serialize};

use crate::params::NetParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates mirroring the parameter tree.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub config: AdamConfig,
    m: NetParams,
    v: NetParams,
}

impl AdamState {
    pub fn new(params: &NetParams, config: AdamConfig) -> Self {
        AdamState {
            step: 0,
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut NetParams, grads: &NetParams) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let moments = self.m.iter_mut().zip(self.v.iter_mut());
        for (((name, p), ((_, m), (_, v))), (_, g)) in params.iter_mut().zip(moments).zip(grads.iter()) {
            debug_assert!(p.len() == g.len(), "gradient shape for {name}");
            let it = p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data());
            for (((p, m), v), g) in it {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
