use serde::{Deserialize, Serialize};

use super::Layer;
use crate::error::{Error, Result};

/// `0.5 * lr0 * (1 + cos(pi * t / T))`, clamped at 0.
pub fn cosine_lr(lr0: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = (t.min(total)) as f64 / total as f64;
    (0.5 * lr0 * (1.0 + (std::f64::consts::PI * frac).cos())).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW state over a list of affine layers, with the learning rate
/// annealed over `total_steps` steps.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub total_steps: usize,
    pub t: usize,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Layer], total_steps: usize) -> Self {
        let zeros: Vec<Layer> = params.iter().map(Layer::zeros_like).collect();
        AdamW {
            config,
            total_steps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.config.lr, self.t, self.total_steps)
    }

    pub fn step(&mut self, params: &mut [Layer], grads: &[Layer]) -> Result<()> {
        if self.t >= self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "optimiser step {} beyond schedule length {}",
                self.t, self.total_steps
            )));
        }
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape("parameter / gradient layer count".into()));
        }
        let c = self.config;
        let lr = self.current_lr();
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let shrink = 1.0 - lr * c.weight_decay;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *p *= shrink;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + c.eps);
        };
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            if p.w.dim() != g.w.dim() || p.b.len() != g.b.len() {
                return Err(Error::Shape("gradient shape".into()));
            }
            ndarray::Zip::from(&mut p.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut p.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}
